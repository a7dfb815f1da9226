#include "coherent/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "coherent/common.hpp"

namespace fs = std::filesystem;

namespace coherent {

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val" || s == "validation") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split '" + s + "' (want train|val|test)");
}

std::vector<int> DatasetManifest::indices_of(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].split == s) out.push_back(static_cast<int>(i));
    return out;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::string resolve(const std::string& root, const std::string& path) {
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(root) / p).string();
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

int resolve_label(const ManifestRow& row, int row_number, const LoadOptions& opts) {
    const std::string& raw = row.label;
    auto it = opts.label_map.find(raw);
    if (it != opts.label_map.end()) return it->second;
    try {
        std::size_t used = 0;
        const int v = std::stoi(raw, &used);
        if (used == raw.size() && v >= 0) return v;
    } catch (const std::exception&) {
    }
    throw DataError("row " + std::to_string(row_number) + ": label '" + raw +
                    "' is neither a non-negative integer nor present in the label map");
}

}  // namespace

DatasetManifest read_manifest(const std::string& path, const ConceptVocabulary& vocab,
                              const LoadOptions& opts) {
    vocab.validate();
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest: " + path);

    DatasetManifest manifest;
    manifest.root_dir = fs::path(path).parent_path().string();
    manifest.vocab = vocab;

    std::string line;
    if (!std::getline(f, line)) throw DataError("manifest is empty: " + path);
    const auto header = split_csv(line);
    const int k = vocab.size();
    if (static_cast<int>(header.size()) != 4 + k)
        throw DataError("manifest header has " + std::to_string(header.size()) +
                        " columns, expected " + std::to_string(4 + k) +
                        " (image_path,mask_path,label,<" + std::to_string(k) + " concepts>,split)");
    if (header[0] != "image_path" || header[1] != "mask_path" || header[2] != "label" ||
        header.back() != "split")
        throw DataError("manifest header must be image_path,mask_path,label,<concepts>,split");
    for (int i = 0; i < k; ++i) {
        if (header[3 + i] != vocab.names[static_cast<std::size_t>(i)])
            throw DataError("unknown concept column '" + header[3 + i] + "' at position " +
                            std::to_string(3 + i) + " (expected '" +
                            vocab.names[static_cast<std::size_t>(i)] + "')");
    }

    int row_number = 1;
    while (std::getline(f, line)) {
        ++row_number;
        if (trim(line).empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size())
            throw DataError("row " + std::to_string(row_number) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
        ManifestRow row;
        row.image_path = cells[0];
        row.mask_path = cells[1];
        row.label = cells[2];
        row.concepts.resize(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
            const std::string& cell = cells[static_cast<std::size_t>(3 + i)];
            if (cell == "0")
                row.concepts[static_cast<std::size_t>(i)] = 0.0;
            else if (cell == "1")
                row.concepts[static_cast<std::size_t>(i)] = 1.0;
            else
                throw DataError("row " + std::to_string(row_number) + ": concept '" +
                                vocab.names[static_cast<std::size_t>(i)] + "' must be 0 or 1, got '" +
                                cell + "'");
        }
        row.split = parse_split(cells.back());
        row.id = stem_of(row.image_path);

        const std::string img = resolve(manifest.root_dir, row.image_path);
        if (!fs::exists(img))
            throw DataError("row " + std::to_string(row_number) + ": missing image file " + img);
        if (row.mask_path.empty()) {
            if (opts.require_masks)
                throw DataError("row " + std::to_string(row_number) +
                                ": mask_path is empty but masks are required by the "
                                "configured preprocessing");
        } else {
            const std::string msk = resolve(manifest.root_dir, row.mask_path);
            if (!fs::exists(msk))
                throw DataError("row " + std::to_string(row_number) + ": missing mask file " + msk);
        }
        // Labels must be resolvable now, not at first use.
        (void)resolve_label(row, row_number, opts);
        manifest.rows.push_back(std::move(row));
    }

    // Keep ids unique across the manifest.
    std::map<std::string, int> seen;
    for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
        auto& id = manifest.rows[i].id;
        const int n = seen[id]++;
        if (n > 0) id += "#" + std::to_string(i);
    }
    return manifest;
}

Sample load_sample(const DatasetManifest& manifest, int row_index, const LoadOptions& opts) {
    const ManifestRow& row = manifest.rows[static_cast<std::size_t>(row_index)];
    Sample s;
    s.id = row.id;
    s.concepts = row.concepts;
    s.split = row.split;
    s.label = resolve_label(row, row_index + 2, opts);

    const ImageU8 img = read_png(resolve(manifest.root_dir, row.image_path));
    Tensor image = image_to_tensor(img);
    if (image.dim(0) == 1) {
        // Promote grayscale to 3 channels so one model config covers both.
        Tensor rgb({3, image.dim(1), image.dim(2)});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < image.dim(1); ++y)
                for (int x = 0; x < image.dim(2); ++x) rgb.at3(c, y, x) = image.at3(0, y, x);
        image = std::move(rgb);
    }
    s.image = resize_bilinear(image, opts.input_size, opts.input_size);

    if (!row.mask_path.empty()) {
        const ImageU8 mimg = read_png(resolve(manifest.root_dir, row.mask_path));
        Tensor m3({1, mimg.height, mimg.width});
        {
            const Tensor raw = mask_from_image(mimg);
            for (int y = 0; y < mimg.height; ++y)
                for (int x = 0; x < mimg.width; ++x) m3.at3(0, y, x) = raw.at2(y, x);
        }
        const Tensor resized = resize_bilinear(m3, opts.input_size, opts.input_size);
        s.lesion_mask = Tensor({opts.input_size, opts.input_size});
        for (int y = 0; y < opts.input_size; ++y)
            for (int x = 0; x < opts.input_size; ++x)
                s.lesion_mask.at2(y, x) = resized.at3(0, y, x) >= 0.5 ? 1.0 : 0.0;
        s.has_mask = true;
    } else {
        s.lesion_mask = Tensor({opts.input_size, opts.input_size});
        s.lesion_mask.fill(1.0);
        s.has_mask = false;
    }
    return s;
}

std::vector<Sample> load_all(const DatasetManifest& manifest, const LoadOptions& opts, int workers) {
    const int n = static_cast<int>(manifest.rows.size());
    std::vector<Sample> out(static_cast<std::size_t>(n));
    if (workers <= 1 || n < 4) {
        for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = load_sample(manifest, i, opts);
        return out;
    }
    // Row i always lands in slot i, so worker count cannot change the order.
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex err_mu;
    const int w = std::min(workers, n);
    pool.reserve(static_cast<std::size_t>(w));
    for (int t = 0; t < w; ++t) {
        pool.emplace_back([&, t]() {
            try {
                for (int i = t; i < n; i += w)
                    out[static_cast<std::size_t>(i)] = load_sample(manifest, i, opts);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "image_path,mask_path,label";
    for (const auto& name : manifest.vocab.names) f << "," << name;
    f << ",split\n";
    for (const auto& row : manifest.rows) {
        f << row.image_path << "," << row.mask_path << "," << row.label;
        for (double z : row.concepts) f << "," << (z >= 0.5 ? 1 : 0);
        f << "," << split_name(row.split) << "\n";
    }
    if (!f) throw IoError("short write: " + path);
}

}  // namespace coherent
