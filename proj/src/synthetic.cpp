#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>

#include "coherent/common.hpp"
#include "coherent/dataset.hpp"
#include "coherent/rng.hpp"

namespace fs = std::filesystem;

namespace coherent {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Rgb {
    double r, g, b;
};

// Distinct color + micro-texture per concept so a small train-from-scratch
// backbone can tell them apart with a few hundred images.
const std::array<Rgb, 8> kMotifColors = {{
    {0.22, 0.10, 0.06},  // APN  dark irregular network
    {0.58, 0.44, 0.12},  // TPN  olive regular network
    {0.60, 0.68, 0.95},  // BWV  blue-white blob
    {0.55, 0.08, 0.08},  // ISTR dark red irregular streaks
    {0.95, 0.55, 0.10},  // RSTR orange regular streaks
    {0.38, 0.10, 0.42},  // RDG  purple dot lattice
    {0.05, 0.45, 0.50},  // IDG  teal scattered dots
    {0.94, 0.94, 0.92},  // RS   white regression patch
}};

// Squared elliptical coordinate: < 1 inside the lesion.
double ellipse_u2(const SyntheticGeometry& g, double x, double y) {
    const double dx = x - g.lesion_cx, dy = y - g.lesion_cy;
    const double c = std::cos(g.lesion_theta), s = std::sin(g.lesion_theta);
    const double xr = dx * c + dy * s;
    const double yr = -dx * s + dy * c;
    return (xr / g.lesion_a) * (xr / g.lesion_a) + (yr / g.lesion_b) * (yr / g.lesion_b);
}

// Emits (x, y, alpha) for every pixel a motif touches. All pixels stay within
// the motif's bounding circle, which placement keeps inside the lesion.
void paint_motif(const MotifPlacement& m, int image_size,
                 const std::function<void(int, int, double)>& emit) {
    Rng rng(m.style_seed);
    const double r = m.radius;
    const int x0 = std::max(0, static_cast<int>(std::floor(m.cx - r)));
    const int x1 = std::min(image_size - 1, static_cast<int>(std::ceil(m.cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(m.cy - r)));
    const int y1 = std::min(image_size - 1, static_cast<int>(std::ceil(m.cy + r)));

    auto in_disc = [&](int x, int y, double shrink) {
        const double dx = x - m.cx, dy = y - m.cy;
        return dx * dx + dy * dy <= (r - shrink) * (r - shrink);
    };

    switch (m.concept_index) {
        case 0: {  // APN: grid with jittered phase and gaps
            const double phase_x = rng.uniform(0.0, 3.0), phase_y = rng.uniform(0.0, 3.0);
            const double spacing = rng.uniform(3.0, 3.8);
            Rng holes = rng.fork("holes");
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    if (!in_disc(x, y, 0.5)) continue;
                    const double gx = std::fmod(x + phase_x + 0.35 * std::sin(0.9 * y), spacing);
                    const double gy = std::fmod(y + phase_y + 0.35 * std::sin(0.8 * x), spacing);
                    const bool line = gx < 1.15 || gy < 1.15;
                    if (line && holes.fork(static_cast<std::uint64_t>(y * 1000 + x)).uniform() > 0.18)
                        emit(x, y, 0.9);
                }
            break;
        }
        case 1: {  // TPN: clean regular grid
            const double spacing = 4.0;
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    if (!in_disc(x, y, 0.5)) continue;
                    const double gx = std::fmod(static_cast<double>(x - x0), spacing);
                    const double gy = std::fmod(static_cast<double>(y - y0), spacing);
                    if (gx < 1.0 || gy < 1.0) emit(x, y, 0.85);
                }
            break;
        }
        case 2: {  // BWV: soft filled blob
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double dx = x - m.cx, dy = y - m.cy;
                    const double d = std::sqrt(dx * dx + dy * dy);
                    if (d <= r - 0.5) {
                        const double a = std::clamp(1.15 - d / (r - 0.5), 0.0, 1.0);
                        emit(x, y, 0.55 + 0.45 * a);
                    }
                }
            break;
        }
        case 3:    // ISTR: spokes at irregular angles/lengths
        case 4: {  // RSTR: evenly spaced spokes
            const bool regular = m.concept_index == 4;
            const int n_spokes = regular ? 8 : 7;
            const double base = rng.uniform(0.0, 2.0 * kPi);
            for (int si = 0; si < n_spokes; ++si) {
                const double ang = regular ? base + si * (2.0 * kPi / n_spokes)
                                           : base + si * (2.0 * kPi / n_spokes) +
                                                 rng.uniform(-0.35, 0.35);
                const double len = regular ? r - 1.0 : rng.uniform(0.45 * r, r - 1.0);
                const double ux = std::cos(ang), uy = std::sin(ang);
                for (double t = 1.0; t <= len; t += 0.5) {
                    const int px = static_cast<int>(std::lround(m.cx + t * ux));
                    const int py = static_cast<int>(std::lround(m.cy + t * uy));
                    for (int oy = -1; oy <= 1; ++oy)
                        for (int ox = -1; ox <= 1; ++ox) {
                            const int qx = px + ox, qy = py + oy;
                            if (qx < x0 || qx > x1 || qy < y0 || qy > y1) continue;
                            const double dx = qx - m.cx, dy = qy - m.cy;
                            if (dx * dx + dy * dy > (r - 0.5) * (r - 0.5)) continue;
                            const double off = std::abs(ox) + std::abs(oy);
                            if (off <= 1.0) emit(qx, qy, off == 0 ? 0.95 : 0.45);
                        }
                }
            }
            break;
        }
        case 5: {  // RDG: dot lattice
            for (double cy = m.cy - r + 2.0; cy <= m.cy + r - 2.0; cy += 3.6)
                for (double cx = m.cx - r + 2.0; cx <= m.cx + r - 2.0; cx += 3.6) {
                    const double ddx = cx - m.cx, ddy = cy - m.cy;
                    if (ddx * ddx + ddy * ddy > (r - 2.0) * (r - 2.0)) continue;
                    for (int y = static_cast<int>(cy) - 2; y <= static_cast<int>(cy) + 2; ++y)
                        for (int x = static_cast<int>(cx) - 2; x <= static_cast<int>(cx) + 2; ++x) {
                            const double dx = x - cx, dy = y - cy;
                            if (dx * dx + dy * dy <= 1.3 * 1.3 && in_disc(x, y, 0.5))
                                emit(x, y, 0.95);
                        }
                }
            break;
        }
        case 6: {  // IDG: scattered dots of varying size
            const int n_dots = 9 + static_cast<int>(rng.uniform_index(4));
            for (int di = 0; di < n_dots; ++di) {
                const double ang = rng.uniform(0.0, 2.0 * kPi);
                const double rad = rng.uniform(0.0, r - 2.5);
                const double cx = m.cx + rad * std::cos(ang);
                const double cy = m.cy + rad * std::sin(ang);
                const double dr = rng.uniform(1.0, 1.9);
                for (int y = static_cast<int>(cy - dr) - 1; y <= static_cast<int>(cy + dr) + 1; ++y)
                    for (int x = static_cast<int>(cx - dr) - 1; x <= static_cast<int>(cx + dr) + 1;
                         ++x) {
                        const double dx = x - cx, dy = y - cy;
                        if (dx * dx + dy * dy <= dr * dr && in_disc(x, y, 0.5)) emit(x, y, 0.95);
                    }
            }
            break;
        }
        case 7: {  // RS: blotchy bright patch
            Rng blotch = rng.fork("blotch");
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double dx = x - m.cx, dy = y - m.cy;
                    const double d = std::sqrt(dx * dx + dy * dy);
                    if (d > r - 0.5) continue;
                    const double edge = 1.0 - d / (r - 0.5);
                    const double n = blotch.fork(static_cast<std::uint64_t>(y * 1000 + x)).uniform();
                    if (n < 0.35 + 0.6 * edge) emit(x, y, 0.8 + 0.2 * edge);
                }
            break;
        }
        default:
            throw ConfigError("synthetic motif painter: concept index out of range");
    }
}

}  // namespace

const std::vector<std::string>& synthetic_atypical_concepts() {
    static const std::vector<std::string> kAtypical = {"APN", "BWV", "ISTR", "IDG", "RS"};
    return kAtypical;
}

int synthetic_label_from_concepts(const std::vector<double>& concepts,
                                  const ConceptVocabulary& vocab) {
    int atypical = 0;
    for (const auto& name : synthetic_atypical_concepts()) {
        const int idx = vocab.index_of(name);
        if (idx >= 0 && concepts[static_cast<std::size_t>(idx)] >= 0.5) ++atypical;
    }
    return atypical >= 2 ? 1 : 0;
}

SyntheticGeometry synthetic_geometry(const SyntheticSpec& spec, std::uint64_t seed, int index,
                                     const ConceptVocabulary& vocab) {
    const int k = vocab.size();
    const double S = spec.image_size;
    Rng rng = Rng(seed).fork("synth-geometry", static_cast<std::uint64_t>(index));

    SyntheticGeometry g;
    g.index = index;
    g.texture_seed = rng.fork("texture").next_u64();
    g.lesion_cx = S / 2.0 + rng.uniform(-0.08 * S, 0.08 * S);
    g.lesion_cy = S / 2.0 + rng.uniform(-0.08 * S, 0.08 * S);
    g.lesion_a = rng.uniform(0.27 * S, 0.36 * S);
    g.lesion_b = rng.uniform(0.24 * S, 0.33 * S);
    g.lesion_theta = rng.uniform(0.0, kPi);

    // Draw the number of atypical motifs so labels come out roughly balanced
    // under the ">= 2 atypical" rule.
    const double roll = rng.uniform();
    int n_atypical = 0;
    if (roll < 0.20) n_atypical = 0;
    else if (roll < 0.50) n_atypical = 1;
    else if (roll < 0.75) n_atypical = 2;
    else if (roll < 0.90) n_atypical = 3;
    else if (roll < 0.97) n_atypical = 4;
    else n_atypical = 5;

    g.concepts.assign(static_cast<std::size_t>(k), 0.0);
    std::vector<int> atypical_indices;
    for (const auto& name : synthetic_atypical_concepts()) {
        const int idx = vocab.index_of(name);
        if (idx >= 0) atypical_indices.push_back(idx);
    }
    rng.shuffle(atypical_indices);
    for (int i = 0; i < n_atypical && i < static_cast<int>(atypical_indices.size()); ++i)
        g.concepts[static_cast<std::size_t>(atypical_indices[static_cast<std::size_t>(i)])] = 1.0;
    for (int c = 0; c < k; ++c) {
        const std::string& name = vocab.names[static_cast<std::size_t>(c)];
        const auto& atyp = synthetic_atypical_concepts();
        if (std::find(atyp.begin(), atyp.end(), name) == atyp.end())
            g.concepts[static_cast<std::size_t>(c)] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    g.label = synthetic_label_from_concepts(g.concepts, vocab);

    // Place each present motif strictly inside the lesion. A center with
    // elliptical coordinate u satisfies dist(center, boundary) >= b*(1-u), so
    // u <= 1 - (radius+2)/b guarantees the whole bounding circle fits.
    const double b_min = g.lesion_b;
    Rng place = rng.fork("place");
    std::vector<std::pair<double, double>> used;
    for (int c = 0; c < k; ++c) {
        if (g.concepts[static_cast<std::size_t>(c)] < 0.5) continue;
        MotifPlacement m;
        m.concept_index = c;
        m.radius = place.uniform(7.0, 9.0);
        m.style_seed = place.fork("style", static_cast<std::uint64_t>(c)).next_u64();
        const double u_max = 1.0 - (m.radius + 2.0) / b_min;
        double min_sep = 15.0;
        bool placed = false;
        for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
            if (attempt == 200) min_sep = 10.0;  // crowded lesions: relax separation only
            const double px = g.lesion_cx + place.uniform(-g.lesion_a, g.lesion_a);
            const double py = g.lesion_cy + place.uniform(-g.lesion_b, g.lesion_b);
            if (ellipse_u2(g, px, py) > u_max * u_max) continue;
            bool clash = false;
            for (const auto& [ux, uy] : used) {
                const double dx = px - ux, dy = py - uy;
                if (dx * dx + dy * dy < min_sep * min_sep) clash = true;
            }
            if (clash) continue;
            m.cx = px;
            m.cy = py;
            placed = true;
        }
        if (!placed) {
            // Last resort: lesion center offset by concept index; still inside.
            m.cx = g.lesion_cx + (c - k / 2) * 2.0;
            m.cy = g.lesion_cy;
            m.radius = 6.0;
        }
        used.emplace_back(m.cx, m.cy);
        g.motifs.push_back(m);
    }

    // Concept-like clutter outside the lesion: makes raw-image training
    // genuinely harder than masked training.
    Rng decoy_rng = rng.fork("decoys");
    if (decoy_rng.uniform() < spec.decoy_probability) {
        const int n_decoys = 1 + static_cast<int>(decoy_rng.uniform_index(2));
        for (int d = 0; d < n_decoys; ++d) {
            MotifPlacement m;
            m.concept_index = static_cast<int>(decoy_rng.uniform_index(static_cast<std::uint64_t>(k)));
            m.radius = decoy_rng.uniform(6.0, 8.0);
            m.style_seed = decoy_rng.fork("style", static_cast<std::uint64_t>(d)).next_u64();
            const double u_min = 1.0 + (m.radius + 2.0) / b_min;
            for (int attempt = 0; attempt < 200; ++attempt) {
                const double margin = m.radius + 2.0;
                const double px = decoy_rng.uniform(margin, S - margin);
                const double py = decoy_rng.uniform(margin, S - margin);
                if (ellipse_u2(g, px, py) < u_min * u_min) continue;
                m.cx = px;
                m.cy = py;
                g.decoys.push_back(m);
                break;
            }
        }
    }
    return g;
}

void render_synthetic(const SyntheticGeometry& geo, const SyntheticSpec& spec, ImageU8& image_out,
                      ImageU8& mask_out) {
    const int S = spec.image_size;
    Tensor canvas({3, S, S});
    Rng tex(geo.texture_seed);

    // Background skin with a soft gradient; lesion fill darkens toward center.
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const double grad = 0.05 * (static_cast<double>(y) / S);
            const double n = tex.uniform(-0.02, 0.02);
            double r = 0.86 - grad + n, gch = 0.72 - grad + n, b = 0.64 - grad + n;
            const double u2 = ellipse_u2(geo, x, y);
            if (u2 <= 1.0) {
                const double u = std::sqrt(u2);
                const double shade = 1.0 - 0.18 * (1.0 - u);
                r = (0.46 + n) * shade;
                gch = (0.30 + n) * shade;
                b = (0.22 + n) * shade;
            }
            canvas.at3(0, y, x) = r;
            canvas.at3(1, y, x) = gch;
            canvas.at3(2, y, x) = b;
        }

    auto blend = [&](const MotifPlacement& m) {
        const Rgb color = kMotifColors[static_cast<std::size_t>(m.concept_index)];
        paint_motif(m, S, [&](int x, int y, double a) {
            canvas.at3(0, y, x) = (1 - a) * canvas.at3(0, y, x) + a * color.r;
            canvas.at3(1, y, x) = (1 - a) * canvas.at3(1, y, x) + a * color.g;
            canvas.at3(2, y, x) = (1 - a) * canvas.at3(2, y, x) + a * color.b;
        });
    };
    for (const auto& m : geo.motifs) blend(m);
    for (const auto& m : geo.decoys) blend(m);

    image_out = tensor_to_image(canvas);
    Tensor mask({S, S});
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) mask.at2(y, x) = ellipse_u2(geo, x, y) <= 1.0 ? 1.0 : 0.0;
    mask_out = mask_to_image(mask);
}

Tensor render_motif_footprint(const MotifPlacement& motif, int image_size) {
    Tensor footprint({image_size, image_size});
    paint_motif(motif, image_size, [&](int x, int y, double a) {
        if (a > 0.0) footprint.at2(y, x) = 1.0;
    });
    return footprint;
}

DatasetManifest generate_synthetic(int n, std::uint64_t seed, const SyntheticSpec& spec,
                                   const std::string& out_dir) {
    if (n < 10) throw ConfigError("synthetic dataset needs n >= 10, got " + std::to_string(n));
    if (spec.image_size < 32) throw ConfigError("synthetic image_size must be >= 32");

    const ConceptVocabulary vocab = ConceptVocabulary::dermoscopic();
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");

    // Split assignment: shuffle indices once, slice by the configured counts.
    int n_train = spec.train_count, n_val = spec.val_count, n_test = spec.test_count;
    if (n_train < 0 || n_val < 0 || n_test < 0) {
        n_train = static_cast<int>(std::lround(spec.train_fraction * n));
        n_val = static_cast<int>(std::lround(spec.val_fraction * n));
        n_test = n - n_train - n_val;
    }
    if (n_train + n_val + n_test != n)
        throw ConfigError("synthetic split counts must sum to n");
    if (n_train <= 0 || n_test < 0 || n_val < 0)
        throw ConfigError("synthetic split counts must leave a non-empty train split");

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng split_rng = Rng(seed).fork("synth-split");
    split_rng.shuffle(order);
    std::vector<Split> split_of(static_cast<std::size_t>(n), Split::train);
    for (int i = 0; i < n; ++i) {
        Split s = Split::test;
        if (i < n_train) s = Split::train;
        else if (i < n_train + n_val) s = Split::val;
        split_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = s;
    }

    DatasetManifest manifest;
    manifest.root_dir = out_dir;
    manifest.vocab = vocab;
    manifest.rows.reserve(static_cast<std::size_t>(n));

    for (int i = 0; i < n; ++i) {
        const SyntheticGeometry geo = synthetic_geometry(spec, seed, i, vocab);
        ImageU8 image, mask;
        render_synthetic(geo, spec, image, mask);
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%05d", i);
        const std::string img_rel = std::string("images/") + name + ".png";
        const std::string msk_rel = std::string("masks/") + name + ".png";
        write_png((fs::path(out_dir) / img_rel).string(), image);
        write_png((fs::path(out_dir) / msk_rel).string(), mask);

        ManifestRow row;
        row.image_path = img_rel;
        row.mask_path = msk_rel;
        row.label = std::to_string(geo.label);
        row.concepts = geo.concepts;
        row.split = split_of[static_cast<std::size_t>(i)];
        row.id = name;
        manifest.rows.push_back(std::move(row));
    }
    write_manifest((fs::path(out_dir) / "manifest.csv").string(), manifest);
    return manifest;
}

}  // namespace coherent
