#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>

#include "coherent/rng.hpp"
#include "coherent/tensor.hpp"

namespace testutil {

// Unique scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("coherent_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string str() const { return path_.string(); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline coherent::Tensor random_tensor(std::vector<int> shape, coherent::Rng& rng,
                                      double lo = -1.0, double hi = 1.0) {
    coherent::Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline std::vector<double> random_vec(std::size_t n, coherent::Rng& rng, double lo = -1.0,
                                      double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline std::vector<double> random_binary(std::size_t n, coherent::Rng& rng, double p = 0.5) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.bernoulli(p) ? 1.0 : 0.0;
    return v;
}

}  // namespace testutil
