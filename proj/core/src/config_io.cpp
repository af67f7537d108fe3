#include "vfeel/config_io.hpp"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vfeel {
namespace config {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::string format_double(double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

struct RawConfig {
    // section -> key -> value; top-level keys live under ""
    std::map<std::string, std::map<std::string, std::string>> sections;
    std::vector<std::string> errors;
};

RawConfig parse_raw(const std::string& text) {
    RawConfig raw;
    std::istringstream stream(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                raw.errors.push_back("line " + std::to_string(line_no) + ": malformed section header");
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            raw.sections[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            raw.errors.push_back("line " + std::to_string(line_no) + ": expected key = value");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            raw.errors.push_back("line " + std::to_string(line_no) + ": empty key");
            continue;
        }
        raw.sections[section][key] = value;
    }
    return raw;
}

class SectionReader {
public:
    SectionReader(const std::string& name, const std::map<std::string, std::string>& values,
                  std::vector<std::string>& errors)
        : name_(name), values_(values), errors_(errors) {}

    void read(const std::string& key, double& out) {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        seen_.push_back(key);
        try {
            std::size_t pos = 0;
            out = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            errors_.push_back(qualified(key) + ": not a number ('" + it->second + "')");
        }
    }
    void read(const std::string& key, int& out) {
        double value = out;
        const std::size_t errors_before = errors_.size();
        read(key, value);
        if (errors_.size() != errors_before) return;
        if (value != std::floor(value))
            errors_.push_back(qualified(key) + ": expected an integer");
        else
            out = static_cast<int>(value);
    }
    void read(const std::string& key, std::uint64_t& out) {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        seen_.push_back(key);
        try {
            std::size_t pos = 0;
            out = std::stoull(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            errors_.push_back(qualified(key) + ": not an unsigned integer ('" + it->second + "')");
        }
    }
    void read(const std::string& key, bool& out) {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        seen_.push_back(key);
        if (it->second == "true" || it->second == "1")
            out = true;
        else if (it->second == "false" || it->second == "0")
            out = false;
        else
            errors_.push_back(qualified(key) + ": expected true/false");
    }
    void read(const std::string& key, std::string& out) {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        seen_.push_back(key);
        out = it->second;
    }

    void finish() {
        for (const auto& [key, value] : values_) {
            if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
                errors_.push_back(qualified(key) + ": unknown key");
        }
    }

private:
    std::string qualified(const std::string& key) const {
        return name_.empty() ? key : name_ + "." + key;
    }
    std::string name_;
    const std::map<std::string, std::string>& values_;
    std::vector<std::string>& errors_;
    std::vector<std::string> seen_;
};

void read_device(SectionReader& reader, DeviceParams& device) {
    reader.read("energy_budget_joules", device.energy_budget_joules);
    reader.read("per_round_latency_budget_s", device.per_round_latency_budget_s);
    reader.read("max_power_watts", device.max_power_watts);
    reader.read("cycles_per_sample", device.cycles_per_sample);
    reader.read("cpu_freq_hz", device.cpu_freq_hz);
    reader.read("capacitance_coeff", device.capacitance_coeff);
    reader.read("sense_latency_per_sample_s", device.sense_latency_per_sample_s);
    reader.read("clutter_variance", device.clutter_variance);
    reader.finish();
}

}  // namespace

LoadedConfig parse_config(const std::string& text) {
    RawConfig raw = parse_raw(text);
    std::vector<std::string>& errors = raw.errors;
    LoadedConfig out;

    static const std::map<std::string, std::string> empty;
    auto section = [&](const std::string& name) -> const std::map<std::string, std::string>& {
        auto it = raw.sections.find(name);
        return it == raw.sections.end() ? empty : it->second;
    };

    {
        SectionReader reader("", section(""), errors);
        reader.read("rng_seed", out.system.rng_seed);
        reader.finish();
    }
    {
        SectionReader reader("network", section("network"), errors);
        auto& net = out.system.network;
        reader.read("num_devices", net.num_devices);
        reader.read("num_rounds", net.num_rounds);
        reader.read("embedding_dim", net.embedding_dim);
        reader.read("symbols_per_block", net.symbols_per_block);
        reader.read("slot_duration_s", net.slot_duration_s);
        reader.read("channel_noise_variance", net.channel_noise_variance);
        reader.read("sensing_noise_variance", net.sensing_noise_variance);
        reader.read("path_loss", net.path_loss);
        reader.finish();
    }

    // device blocks: [device] sets the template, [device k] overrides one
    DeviceParams base;
    if (raw.sections.count("device")) {
        SectionReader reader("device", section("device"), errors);
        read_device(reader, base);
    }
    const int K = out.system.network.num_devices;
    out.system.devices.assign(K, base);
    std::vector<int> indexed;
    for (const auto& [name, values] : raw.sections) {
        if (name.rfind("device ", 0) != 0) continue;
        int index = 0;
        try {
            index = std::stoi(name.substr(7));
        } catch (const std::exception&) {
            errors.push_back("section [" + name + "]: malformed device index");
            continue;
        }
        indexed.push_back(index);
        if (index < 1 || index > K) {
            errors.push_back("section [" + name + "]: device index out of range 1.." +
                             std::to_string(K));
            continue;
        }
        SectionReader reader(name, values, errors);
        read_device(reader, out.system.devices[index - 1]);
    }
    if (!indexed.empty() && static_cast<int>(indexed.size()) != K) {
        errors.push_back("device blocks: " + std::to_string(indexed.size()) +
                         " indexed blocks given but network.num_devices = " + std::to_string(K));
    }

    {
        SectionReader reader("constants", section("constants"), errors);
        auto& c = out.constants;
        reader.read("lipschitz_L", c.lipschitz_L);
        reader.read("learning_rate_mu", c.learning_rate_mu);
        reader.read("grad_variance_sigma2", c.grad_variance_sigma2);
        reader.read("embed_param_grad_G1", c.embed_param_grad_G1);
        reader.read("embed_input_grad_G2", c.embed_input_grad_G2);
        reader.read("hessian_bound_Psi", c.hessian_bound_Psi);
        reader.finish();
    }
    out.constants.num_devices_K = out.system.network.num_devices;
    out.constants.num_rounds_T = out.system.network.num_rounds;

    {
        SectionReader reader("solver", section("solver"), errors);
        auto& s = out.solver;
        reader.read("outer_tol", s.outer_tol);
        reader.read("inner_tol", s.inner_tol);
        reader.read("dual_tol", s.dual_tol);
        reader.read("max_outer_iters", s.max_outer_iters);
        reader.read("max_inner_iters", s.max_inner_iters);
        std::string dual_method = s.dual_method == DualMethod::ellipsoid ? "ellipsoid" : "subgradient";
        reader.read("dual_method", dual_method);
        if (dual_method == "subgradient")
            s.dual_method = DualMethod::subgradient;
        else if (dual_method == "ellipsoid")
            s.dual_method = DualMethod::ellipsoid;
        else
            errors.push_back("solver.dual_method: expected subgradient or ellipsoid");
        std::string rounding = s.rounding == Rounding::floor ? "floor" : "nearest-feasible";
        reader.read("rounding", rounding);
        if (rounding == "floor")
            s.rounding = Rounding::floor;
        else if (rounding == "nearest-feasible")
            s.rounding = Rounding::nearest_feasible;
        else
            errors.push_back("solver.rounding: expected floor or nearest-feasible");
        reader.read("fixed_power_per_symbol_units", s.fixed_power_per_symbol_units);
        reader.finish();
    }
    {
        SectionReader reader("task", section("task"), errors);
        auto& t = out.task;
        reader.read("num_classes", t.num_classes);
        reader.read("samples", t.samples);
        reader.read("feature_dim_per_device", t.feature_dim_per_device);
        reader.read("class_separation", t.class_separation);
        reader.read("feature_scale", t.feature_scale);
        reader.read("task_seed", t.task_seed);
        reader.read("hidden", t.hidden);
        reader.read("hidden_units", t.hidden_units);
        reader.finish();
    }

    for (const auto& [name, values] : raw.sections) {
        if (name.empty() || name == "network" || name == "device" || name == "constants" ||
            name == "solver" || name == "task" || name.rfind("device ", 0) == 0)
            continue;
        errors.push_back("section [" + name + "]: unknown section");
    }

    if (errors.empty()) {
        try {
            out.system.validate();
            out.constants.validate();
            out.solver.validate();
        } catch (const std::exception& e) {
            errors.push_back(e.what());
        }
    }
    if (!errors.empty()) {
        std::string message = "configuration invalid:";
        for (const auto& error : errors) message += "\n  - " + error;
        throw std::runtime_error(message);
    }
    return out;
}

LoadedConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str());
}

std::string canonical_serialize(const LoadedConfig& config) {
    std::ostringstream out;
    char seed_buffer[32];
    std::snprintf(seed_buffer, sizeof(seed_buffer), "%" PRIu64, config.system.rng_seed);
    out << "rng_seed = " << seed_buffer << "\n\n";

    const auto& net = config.system.network;
    out << "[network]\n";
    out << "channel_noise_variance = " << format_double(net.channel_noise_variance) << "\n";
    out << "embedding_dim = " << net.embedding_dim << "\n";
    out << "num_devices = " << net.num_devices << "\n";
    out << "num_rounds = " << net.num_rounds << "\n";
    out << "path_loss = " << format_double(net.path_loss) << "\n";
    out << "sensing_noise_variance = " << format_double(net.sensing_noise_variance) << "\n";
    out << "slot_duration_s = " << format_double(net.slot_duration_s) << "\n";
    out << "symbols_per_block = " << net.symbols_per_block << "\n";

    for (std::size_t k = 0; k < config.system.devices.size(); ++k) {
        const auto& device = config.system.devices[k];
        out << "\n[device " << k + 1 << "]\n";
        out << "capacitance_coeff = " << format_double(device.capacitance_coeff) << "\n";
        out << "clutter_variance = " << format_double(device.clutter_variance) << "\n";
        out << "cpu_freq_hz = " << format_double(device.cpu_freq_hz) << "\n";
        out << "cycles_per_sample = " << format_double(device.cycles_per_sample) << "\n";
        out << "energy_budget_joules = " << format_double(device.energy_budget_joules) << "\n";
        out << "max_power_watts = " << format_double(device.max_power_watts) << "\n";
        out << "per_round_latency_budget_s = " << format_double(device.per_round_latency_budget_s)
            << "\n";
        out << "sense_latency_per_sample_s = " << format_double(device.sense_latency_per_sample_s)
            << "\n";
    }

    const auto& c = config.constants;
    out << "\n[constants]\n";
    out << "embed_input_grad_G2 = " << format_double(c.embed_input_grad_G2) << "\n";
    out << "embed_param_grad_G1 = " << format_double(c.embed_param_grad_G1) << "\n";
    out << "grad_variance_sigma2 = " << format_double(c.grad_variance_sigma2) << "\n";
    out << "hessian_bound_Psi = " << format_double(c.hessian_bound_Psi) << "\n";
    out << "learning_rate_mu = " << format_double(c.learning_rate_mu) << "\n";
    out << "lipschitz_L = " << format_double(c.lipschitz_L) << "\n";

    const auto& s = config.solver;
    out << "\n[solver]\n";
    out << "dual_method = " << (s.dual_method == DualMethod::ellipsoid ? "ellipsoid" : "subgradient")
        << "\n";
    out << "dual_tol = " << format_double(s.dual_tol) << "\n";
    out << "fixed_power_per_symbol_units = " << (s.fixed_power_per_symbol_units ? "true" : "false")
        << "\n";
    out << "inner_tol = " << format_double(s.inner_tol) << "\n";
    out << "max_inner_iters = " << s.max_inner_iters << "\n";
    out << "max_outer_iters = " << s.max_outer_iters << "\n";
    out << "outer_tol = " << format_double(s.outer_tol) << "\n";
    out << "rounding = " << (s.rounding == Rounding::floor ? "floor" : "nearest-feasible") << "\n";

    const auto& t = config.task;
    out << "\n[task]\n";
    out << "class_separation = " << format_double(t.class_separation) << "\n";
    out << "feature_dim_per_device = " << t.feature_dim_per_device << "\n";
    out << "feature_scale = " << format_double(t.feature_scale) << "\n";
    out << "hidden = " << (t.hidden ? "true" : "false") << "\n";
    out << "hidden_units = " << t.hidden_units << "\n";
    out << "num_classes = " << t.num_classes << "\n";
    out << "samples = " << t.samples << "\n";
    char task_seed_buffer[32];
    std::snprintf(task_seed_buffer, sizeof(task_seed_buffer), "%" PRIu64, t.task_seed);
    out << "task_seed = " << task_seed_buffer << "\n";
    return out.str();
}

std::string config_hash(const LoadedConfig& config) {
    const std::string canonical = canonical_serialize(config);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char byte : canonical) {
        hash ^= byte;
        hash *= 0x100000001b3ULL;
    }
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%016" PRIx64, hash);
    return buffer;
}

namespace {

const std::vector<std::string>& sweepable_keys() {
    static const std::vector<std::string> keys = {
        "network.channel_noise_variance",
        "network.sensing_noise_variance",
        "network.path_loss",
        "network.slot_duration_s",
        "device.energy_budget_joules",
        "device.per_round_latency_budget_s",
        "device.max_power_watts",
        "device.cycles_per_sample",
        "device.cpu_freq_hz",
        "device.capacitance_coeff",
        "device.sense_latency_per_sample_s",
        "device.clutter_variance",
        "constants.lipschitz_L",
        "constants.learning_rate_mu",
        "constants.grad_variance_sigma2",
        "constants.embed_param_grad_G1",
        "constants.embed_input_grad_G2",
        "constants.hessian_bound_Psi",
        "task.class_separation",
        "task.feature_scale",
    };
    return keys;
}

}  // namespace

bool is_sweepable_key(const std::string& key) {
    const auto& keys = sweepable_keys();
    return std::find(keys.begin(), keys.end(), key) != keys.end();
}

void apply_override(LoadedConfig& config, const std::string& key, double value) {
    if (!is_sweepable_key(key)) throw std::runtime_error("unknown sweep/override key: " + key);
    auto set_device = [&](double DeviceParams::* field) {
        for (auto& device : config.system.devices) device.*field = value;
    };
    if (key == "network.channel_noise_variance")
        config.system.network.channel_noise_variance = value;
    else if (key == "network.sensing_noise_variance")
        config.system.network.sensing_noise_variance = value;
    else if (key == "network.path_loss")
        config.system.network.path_loss = value;
    else if (key == "network.slot_duration_s")
        config.system.network.slot_duration_s = value;
    else if (key == "device.energy_budget_joules")
        set_device(&DeviceParams::energy_budget_joules);
    else if (key == "device.per_round_latency_budget_s")
        set_device(&DeviceParams::per_round_latency_budget_s);
    else if (key == "device.max_power_watts")
        set_device(&DeviceParams::max_power_watts);
    else if (key == "device.cycles_per_sample")
        set_device(&DeviceParams::cycles_per_sample);
    else if (key == "device.cpu_freq_hz")
        set_device(&DeviceParams::cpu_freq_hz);
    else if (key == "device.capacitance_coeff")
        set_device(&DeviceParams::capacitance_coeff);
    else if (key == "device.sense_latency_per_sample_s")
        set_device(&DeviceParams::sense_latency_per_sample_s);
    else if (key == "device.clutter_variance")
        set_device(&DeviceParams::clutter_variance);
    else if (key == "constants.lipschitz_L")
        config.constants.lipschitz_L = value;
    else if (key == "constants.learning_rate_mu")
        config.constants.learning_rate_mu = value;
    else if (key == "constants.grad_variance_sigma2")
        config.constants.grad_variance_sigma2 = value;
    else if (key == "constants.embed_param_grad_G1")
        config.constants.embed_param_grad_G1 = value;
    else if (key == "constants.embed_input_grad_G2")
        config.constants.embed_input_grad_G2 = value;
    else if (key == "constants.hessian_bound_Psi")
        config.constants.hessian_bound_Psi = value;
    else if (key == "task.class_separation")
        config.task.class_separation = value;
    else if (key == "task.feature_scale")
        config.task.feature_scale = value;
}

}  // namespace config
}  // namespace vfeel
