#include "coherent/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "coherent/common.hpp"
#include "coherent/image.hpp"

namespace fs = std::filesystem;

namespace coherent {

std::vector<int> concept_presence(const std::vector<double>& logits) {
    std::vector<int> out(logits.size(), 0);
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] > 0.0 ? 1 : 0;
    return out;
}

std::vector<double> contributions(const std::vector<double>& logits, const Linear& classifier,
                                  int predicted_class) {
    const int k = static_cast<int>(logits.size());
    if (predicted_class < 0 || predicted_class >= classifier.out_dim())
        throw ShapeError("contributions: class index out of range");
    std::vector<double> products(static_cast<std::size_t>(k));
    const double* wrow = classifier.weight.data() +
                         static_cast<std::size_t>(predicted_class) * classifier.in_dim();
    for (int c = 0; c < k; ++c) products[static_cast<std::size_t>(c)] = logits[static_cast<std::size_t>(c)] * wrow[c];

    double mx = products[0];
    for (double p : products) mx = std::max(mx, p);
    double sum = 0.0;
    std::vector<double> out(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        out[static_cast<std::size_t>(c)] = std::exp(products[static_cast<std::size_t>(c)] - mx);
        sum += out[static_cast<std::size_t>(c)];
    }
    for (double& v : out) v /= sum;
    return out;
}

int predict_label(const std::vector<double>& logits, const Linear& classifier) {
    std::vector<double> scores(static_cast<std::size_t>(classifier.out_dim()));
    classifier.forward(logits.data(), scores.data());
    int argmax = 0;
    for (std::size_t c = 1; c < scores.size(); ++c)
        if (scores[c] > scores[static_cast<std::size_t>(argmax)]) argmax = static_cast<int>(c);
    return argmax;
}

std::string render_text(const ExplanationReport& report, const ConceptVocabulary& vocab,
                        double contribution_threshold) {
    const int k = vocab.size();
    std::vector<int> named;
    for (int c = 0; c < k; ++c)
        if (report.concept_presence[static_cast<std::size_t>(c)] == 1 &&
            report.contributions[static_cast<std::size_t>(c)] > contribution_threshold)
            named.push_back(c);
    std::stable_sort(named.begin(), named.end(), [&](int a, int b) {
        return report.contributions[static_cast<std::size_t>(a)] >
               report.contributions[static_cast<std::size_t>(b)];
    });

    std::ostringstream os;
    os << "Classified as " << report.label_name;
    if (named.empty()) {
        os << "; no supporting concepts identified.";
        return os.str();
    }
    os << " because ";
    for (std::size_t i = 0; i < named.size(); ++i) {
        const int c = named[i];
        char pct[16];
        std::snprintf(pct, sizeof(pct), "%.1f",
                      100.0 * report.contributions[static_cast<std::size_t>(c)]);
        if (i > 0) os << (i + 1 == named.size() ? " and " : ", ");
        os << vocab.phrases[static_cast<std::size_t>(c)] << " (" << pct << "%)";
    }
    os << ".";
    return os.str();
}

std::vector<std::string> export_overlays(const Tensor& image, const Tensor& maps,
                                         const ConceptVocabulary& vocab,
                                         const std::string& out_dir,
                                         const std::string& file_prefix) {
    if (image.rank() != 3 || maps.rank() != 3) throw ShapeError("export_overlays: bad ranks");
    const int k = maps.dim(0);
    if (k != vocab.size()) throw ShapeError("export_overlays: map count != vocabulary size");
    const int h = image.dim(1), w = image.dim(2);
    fs::create_directories(out_dir);

    std::vector<std::string> paths;
    for (int c = 0; c < k; ++c) {
        // Min-max normalize this concept's map; constant maps become zeros.
        const int p = maps.dim(1), q = maps.dim(2);
        Tensor norm({1, p, q});
        double lo = maps.at3(c, 0, 0), hi = lo;
        for (int y = 0; y < p; ++y)
            for (int x = 0; x < q; ++x) {
                lo = std::min(lo, maps.at3(c, y, x));
                hi = std::max(hi, maps.at3(c, y, x));
            }
        if (hi > lo)
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < q; ++x) norm.at3(0, y, x) = (maps.at3(c, y, x) - lo) / (hi - lo);
        const Tensor up = resize_bilinear(norm, h, w);

        // Per-pixel alpha 0.5*a toward a red highlight.
        Tensor blended = image;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double a = 0.5 * up.at3(0, y, x);
                blended.at3(0, y, x) = (1 - a) * image.at3(0, y, x) + a * 1.0;
                blended.at3(1, y, x) = (1 - a) * image.at3(1, y, x);
                blended.at3(2, y, x) = (1 - a) * image.at3(2, y, x);
            }
        const std::string path =
            (fs::path(out_dir) / (file_prefix + "_" + vocab.names[static_cast<std::size_t>(c)] + ".png"))
                .string();
        write_png(path, tensor_to_image(blended));
        paths.push_back(path);
    }
    return paths;
}

ExplanationReport explain_image(const ConceptModel& model, const Tensor& input,
                                const ConceptVocabulary& vocab,
                                const std::vector<std::string>& class_names,
                                const std::string& overlay_dir, double contribution_threshold) {
    const ForwardTrace trace = model.forward(input);
    ExplanationReport report;
    report.logits = trace.logits;
    report.predicted_label = predict_label(trace.logits, model.classifier());
    report.label_name = (report.predicted_label < static_cast<int>(class_names.size()))
                            ? class_names[static_cast<std::size_t>(report.predicted_label)]
                            : ("class" + std::to_string(report.predicted_label));
    report.concept_presence = concept_presence(trace.logits);
    report.contributions = contributions(trace.logits, model.classifier(), report.predicted_label);
    if (!overlay_dir.empty())
        report.overlay_paths = export_overlays(input, trace.maps, vocab, overlay_dir);
    report.text = render_text(report, vocab, contribution_threshold);
    return report;
}

}  // namespace coherent
