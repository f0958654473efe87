#include "acnorm/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace acnorm {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in " + ctx);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

} // namespace

json to_json(const SyntheticTaskSpec& spec) {
    json j;
    j["task"] = spec.task;
    j["image_size"] = spec.image_size;
    j["n_train"] = spec.n_train;
    j["n_val"] = spec.n_val;
    j["n_test"] = spec.n_test;
    j["intensity_shift"] = spec.intensity_shift;
    j["texture_freq"] = spec.texture_freq;
    j["shape_family"] = spec.shape_family;
    j["noise_sigma"] = spec.noise_sigma;
    j["label_mode"] = spec.label_mode;
    j["n_classes"] = spec.n_classes;
    j["seed"] = spec.seed;
    return j;
}

SyntheticTaskSpec task_from_json(const json& j) {
    check_keys(j,
               {"task", "image_size", "n_train", "n_val", "n_test", "intensity_shift",
                "texture_freq", "shape_family", "noise_sigma", "label_mode", "n_classes", "seed"},
               "task spec");
    SyntheticTaskSpec s;
    s.task = get_or<std::string>(j, "task", s.task);
    s.image_size = get_or<int>(j, "image_size", s.image_size);
    s.n_train = get_or<int>(j, "n_train", s.n_train);
    s.n_val = get_or<int>(j, "n_val", s.n_val);
    s.n_test = get_or<int>(j, "n_test", s.n_test);
    s.intensity_shift = get_or<double>(j, "intensity_shift", s.intensity_shift);
    s.texture_freq = get_or<double>(j, "texture_freq", s.texture_freq);
    s.shape_family = get_or<std::string>(j, "shape_family", s.shape_family);
    s.noise_sigma = get_or<double>(j, "noise_sigma", s.noise_sigma);
    s.label_mode = get_or<std::string>(j, "label_mode", s.label_mode);
    s.n_classes = get_or<int>(j, "n_classes", s.n_classes);
    s.seed = get_or<std::uint64_t>(j, "seed", s.seed);
    s.validate();
    return s;
}

json to_json(const TrainConfig& cfg) {
    json j;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["optimizer"] = cfg.optimizer;
    j["sgd_momentum"] = cfg.sgd_momentum;
    j["seed"] = cfg.seed;
    j["norm_kind"] = to_string(cfg.norm_kind);
    j["temperature"] = cfg.temperature;
    j["eps"] = cfg.eps;
    j["bn_momentum"] = cfg.bn_momentum;
    j["detach_calibration"] = cfg.detach_calibration;
    j["balanced_sampling"] = cfg.balanced_sampling;
    switch (cfg.freeze.kind) {
        case FreezePolicy::Kind::full_ft: j["freeze"] = "full_ft"; break;
        case FreezePolicy::Kind::norm_only: j["freeze"] = "norm_only"; break;
        case FreezePolicy::Kind::custom: j["freeze"] = cfg.freeze.patterns; break;
    }
    return j;
}

TrainConfig train_from_json(const json& j) {
    check_keys(j,
               {"epochs", "batch_size", "learning_rate", "optimizer", "sgd_momentum", "seed",
                "norm_kind", "temperature", "eps", "bn_momentum", "detach_calibration",
                "balanced_sampling", "freeze"},
               "train config");
    TrainConfig c;
    c.epochs = get_or<int>(j, "epochs", c.epochs);
    c.batch_size = get_or<int>(j, "batch_size", c.batch_size);
    c.learning_rate = get_or<double>(j, "learning_rate", c.learning_rate);
    c.optimizer = get_or<std::string>(j, "optimizer", c.optimizer);
    c.sgd_momentum = get_or<double>(j, "sgd_momentum", c.sgd_momentum);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    if (j.contains("norm_kind")) c.norm_kind = norm_kind_from_string(j.at("norm_kind"));
    c.temperature = get_or<double>(j, "temperature", c.temperature);
    c.eps = get_or<double>(j, "eps", c.eps);
    c.bn_momentum = get_or<double>(j, "bn_momentum", c.bn_momentum);
    c.detach_calibration = get_or<bool>(j, "detach_calibration", c.detach_calibration);
    c.balanced_sampling = get_or<bool>(j, "balanced_sampling", c.balanced_sampling);
    if (j.contains("freeze")) {
        const auto& f = j.at("freeze");
        if (f.is_array()) {
            c.freeze = FreezePolicy::custom(f.get<std::vector<std::string>>());
        } else {
            const std::string s = f.get<std::string>();
            if (s == "full_ft")
                c.freeze = FreezePolicy::full_ft();
            else if (s == "norm_only")
                c.freeze = FreezePolicy::norm_only();
            else
                throw ConfigError("unknown freeze policy: " + s);
        }
    }
    c.validate();
    return c;
}

json to_json(const ArchSpec& arch) {
    json j;
    j["task"] = arch.task;
    j["image_size"] = arch.image_size;
    j["in_channels"] = arch.in_channels;
    j["widths"] = arch.widths;
    j["n_classes"] = arch.n_classes;
    j["kernel"] = arch.kernel;
    return j;
}

ArchSpec arch_from_json(const json& j) {
    check_keys(j, {"task", "image_size", "in_channels", "widths", "n_classes", "kernel"},
               "arch spec");
    ArchSpec a;
    a.task = get_or<std::string>(j, "task", a.task);
    a.image_size = get_or<int>(j, "image_size", a.image_size);
    a.in_channels = get_or<int>(j, "in_channels", a.in_channels);
    a.widths = get_or<std::vector<int>>(j, "widths", a.widths);
    a.n_classes = get_or<int>(j, "n_classes", a.n_classes);
    a.kernel = get_or<int>(j, "kernel", a.kernel);
    a.validate();
    return a;
}

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config file: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("bad JSON in ") + path + ": " + e.what());
    }
    return j;
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write file: " + path);
    os << j.dump(2) << "\n";
}

std::uint64_t effective_seed(std::uint64_t config_seed) {
    const char* env = std::getenv("ACNORM_SEED");
    if (!env || !*env) return config_seed;
    return std::strtoull(env, nullptr, 10);
}

} // namespace acnorm
