#include "coherent/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include "coherent/common.hpp"
#include "coherent/rng.hpp"

namespace coherent {

PreprocessMode RunConfig::preprocess_mode() const { return parse_preprocess_mode(preprocess); }

double RunConfig::resolved_gamma() const {
    if (gamma == "auto")
        return preprocess_mode() == PreprocessMode::raw ? 0.1 : 0.25;
    try {
        std::size_t used = 0;
        const double g = std::stod(gamma, &used);
        if (used != gamma.size()) throw std::invalid_argument("trailing");
        return g;
    } catch (const std::exception&) {
        throw ConfigError("gamma must be a number or 'auto', got '" + gamma + "'");
    }
}

LossConfig RunConfig::loss_config() const {
    LossConfig cfg;
    cfg.lambda = lambda;
    cfg.gamma = resolved_gamma();
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.epsilon = epsilon;
    cfg.absent_penalty_weight = absent_penalty_weight;
    cfg.dice_denominator = parse_dice_denominator(dice_denominator);
    cfg.enable_uniqueness = enable_uniqueness ? 1.0 : 0.0;
    cfg.enable_mapping = enable_mapping ? 1.0 : 0.0;
    cfg.validate();
    return cfg;
}

StageSchedule RunConfig::stage_schedule() const {
    StageSchedule s;
    s.epochs[0] = stage1_epochs;
    s.epochs[1] = stage2_epochs;
    s.epochs[2] = stage3_epochs;
    s.learning_rates[0] = lr1;
    s.learning_rates[1] = lr2;
    s.learning_rates[2] = lr3;
    return s;
}

ModelConfig RunConfig::model_config(int vocab_size, int actual_phrase_dim) const {
    ModelConfig m;
    m.backbone = parse_backbone_kind(backbone);
    m.input_size = input_size;
    m.num_concepts = vocab_size;
    m.num_classes = num_classes;
    m.phrase_dim = actual_phrase_dim;
    m.embed_dim = embed_dim;
    m.dropout_rate = dropout;
    return m;
}

int RunConfig::resolved_threads() const {
    if (threads > 0) return threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

TrainOptions RunConfig::train_options() const {
    TrainOptions o;
    o.batch_size = batch_size;
    o.seed = seed;
    o.threads = resolved_threads();
    o.flip_augment = flip_augment != 0;
    o.adam_beta1 = adam_beta1;
    o.adam_beta2 = adam_beta2;
    o.adam_epsilon = adam_epsilon;
    o.out_dir = out_dir;
    return o;
}

std::map<std::string, int> RunConfig::parsed_label_map() const {
    std::map<std::string, int> out;
    if (label_map.empty()) return out;
    std::istringstream is(label_map);
    std::string entry;
    while (std::getline(is, entry, ',')) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos)
            throw ConfigError("label_map entry '" + entry + "' is not name=index");
        const std::string name = entry.substr(0, eq);
        try {
            out[name] = std::stoi(entry.substr(eq + 1));
        } catch (const std::exception&) {
            throw ConfigError("label_map entry '" + entry + "' has a non-integer index");
        }
    }
    return out;
}

std::vector<std::string> RunConfig::parsed_class_names() const {
    std::vector<std::string> out;
    std::istringstream is(class_names);
    std::string name;
    while (std::getline(is, name, ',')) out.push_back(name);
    if (static_cast<int>(out.size()) != num_classes)
        throw ConfigError("class_names lists " + std::to_string(out.size()) + " names but num_classes is " +
                          std::to_string(num_classes));
    return out;
}

void RunConfig::validate() const {
    (void)preprocess_mode();
    (void)loss_config();
    (void)parse_backbone_kind(backbone);
    (void)parsed_class_names();
    (void)parsed_label_map();
    if (input_size < 16) throw ConfigError("input_size must be >= 16");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (embed_dim < 1 || phrase_dim < 1) throw ConfigError("embedding dims must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    if (quantile < 0.0 || quantile >= 1.0) throw ConfigError("quantile must be in [0,1)");
    if (agreement != "both_correct" && agreement != "both_present")
        throw ConfigError("agreement must be both_correct|both_present");
    if (l2_aggregation != "sum" && l2_aggregation != "mean")
        throw ConfigError("l2_aggregation must be sum|mean");
    if (stage1_epochs < 0 || stage2_epochs < 0 || stage3_epochs < 0)
        throw ConfigError("stage epochs must be >= 0");
}

// ---------------------------------------------------------------------------
// Flat key=value serialization. One place defines the key set; parsing and
// writing both go through it so the echoed config always round-trips.
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
    auto as_int = [&](const std::string& v) {
        try {
            return std::stoi(v);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' wants an integer, got '" + v + "'");
        }
    };
    auto as_u64 = [&](const std::string& v) {
        try {
            return static_cast<std::uint64_t>(std::stoull(v));
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' wants an unsigned integer, got '" + v + "'");
        }
    };
    auto as_double = [&](const std::string& v) {
        try {
            return std::stod(v);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' wants a number, got '" + v + "'");
        }
    };

    if (key == "manifest") c.manifest = value;
    else if (key == "out_dir") c.out_dir = value;
    else if (key == "input_size") c.input_size = as_int(value);
    else if (key == "preprocess") c.preprocess = value;
    else if (key == "mask_dir") c.mask_dir = value;
    else if (key == "label_map") c.label_map = value;
    else if (key == "num_classes") c.num_classes = as_int(value);
    else if (key == "class_names") c.class_names = value;
    else if (key == "backbone") c.backbone = value;
    else if (key == "backbone_weights") c.backbone_weights = value;
    else if (key == "word_vectors") c.word_vectors = value;
    else if (key == "phrase_dim") c.phrase_dim = as_int(value);
    else if (key == "embed_dim") c.embed_dim = as_int(value);
    else if (key == "dropout") c.dropout = as_double(value);
    else if (key == "lambda") c.lambda = as_double(value);
    else if (key == "gamma") c.gamma = value;
    else if (key == "alpha") c.alpha = as_double(value);
    else if (key == "beta") c.beta = as_double(value);
    else if (key == "epsilon") c.epsilon = as_double(value);
    else if (key == "absent_penalty_weight") c.absent_penalty_weight = as_double(value);
    else if (key == "dice_denominator") c.dice_denominator = value;
    else if (key == "enable_uniqueness") c.enable_uniqueness = as_int(value);
    else if (key == "enable_mapping") c.enable_mapping = as_int(value);
    else if (key == "stage1_epochs") c.stage1_epochs = as_int(value);
    else if (key == "stage2_epochs") c.stage2_epochs = as_int(value);
    else if (key == "stage3_epochs") c.stage3_epochs = as_int(value);
    else if (key == "lr1") c.lr1 = as_double(value);
    else if (key == "lr2") c.lr2 = as_double(value);
    else if (key == "lr3") c.lr3 = as_double(value);
    else if (key == "batch_size") c.batch_size = as_int(value);
    else if (key == "adam_beta1") c.adam_beta1 = as_double(value);
    else if (key == "adam_beta2") c.adam_beta2 = as_double(value);
    else if (key == "adam_epsilon") c.adam_epsilon = as_double(value);
    else if (key == "flip_augment") c.flip_augment = as_int(value);
    else if (key == "seed") c.seed = as_u64(value);
    else if (key == "threads") c.threads = as_int(value);
    else if (key == "quantile") c.quantile = as_double(value);
    else if (key == "report_threshold") c.report_threshold = as_double(value);
    else if (key == "agreement") c.agreement = value;
    else if (key == "l2_aggregation") c.l2_aggregation = value;
    else throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_file(RunConfig& config, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + " is not key = value");
        apply_config_entry(config, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
}

std::string RunConfig::serialize() const {
    std::ostringstream os;
    os << "manifest = " << manifest << "\n";
    os << "out_dir = " << out_dir << "\n";
    os << "input_size = " << input_size << "\n";
    os << "preprocess = " << preprocess << "\n";
    os << "mask_dir = " << mask_dir << "\n";
    os << "label_map = " << label_map << "\n";
    os << "num_classes = " << num_classes << "\n";
    os << "class_names = " << class_names << "\n";
    os << "backbone = " << backbone << "\n";
    os << "backbone_weights = " << backbone_weights << "\n";
    os << "word_vectors = " << word_vectors << "\n";
    os << "phrase_dim = " << phrase_dim << "\n";
    os << "embed_dim = " << embed_dim << "\n";
    os << "dropout = " << fmt(dropout) << "\n";
    os << "lambda = " << fmt(lambda) << "\n";
    os << "gamma = " << gamma << "\n";
    os << "alpha = " << fmt(alpha) << "\n";
    os << "beta = " << fmt(beta) << "\n";
    os << "epsilon = " << fmt(epsilon) << "\n";
    os << "absent_penalty_weight = " << fmt(absent_penalty_weight) << "\n";
    os << "dice_denominator = " << dice_denominator << "\n";
    os << "enable_uniqueness = " << enable_uniqueness << "\n";
    os << "enable_mapping = " << enable_mapping << "\n";
    os << "stage1_epochs = " << stage1_epochs << "\n";
    os << "stage2_epochs = " << stage2_epochs << "\n";
    os << "stage3_epochs = " << stage3_epochs << "\n";
    os << "lr1 = " << fmt(lr1) << "\n";
    os << "lr2 = " << fmt(lr2) << "\n";
    os << "lr3 = " << fmt(lr3) << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "adam_beta1 = " << fmt(adam_beta1) << "\n";
    os << "adam_beta2 = " << fmt(adam_beta2) << "\n";
    os << "adam_epsilon = " << fmt(adam_epsilon) << "\n";
    os << "flip_augment = " << flip_augment << "\n";
    os << "seed = " << seed << "\n";
    os << "threads = " << threads << "\n";
    os << "quantile = " << fmt(quantile) << "\n";
    os << "report_threshold = " << fmt(report_threshold) << "\n";
    os << "agreement = " << agreement << "\n";
    os << "l2_aggregation = " << l2_aggregation << "\n";
    return os.str();
}

std::string RunConfig::hash() const {
    std::ostringstream os;
    os << std::hex << Rng::fnv1a(serialize());
    return os.str();
}

void write_config(const RunConfig& config, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << config.serialize();
}

}  // namespace coherent
