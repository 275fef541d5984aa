#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "favae/error.hpp"
#include "favae/harness.hpp"

namespace favae::harness {

namespace {

const std::vector<std::pair<std::string, std::string>>& default_entries() {
    static const std::vector<std::pair<std::string, std::string>> d{
        {"run.seed", "0"},
        {"run.steps", "3000"},
        {"run.batch", "8"},
        {"run.log_every", "50"},
        {"run.image_every", "500"},
        {"run.eval_count", "16"},
        {"run.lr", "0.002"},
        {"run.beta1", "0.9"},
        {"run.beta2", "0.999"},
        {"run.eps", "1e-08"},
        {"data.kind", "checker-mix"},
        {"data.n", "64"},
        {"data.size", "32"},
        {"data.dir", ""},
        {"data.seed", "1234"},
        {"data.eval_seed", "99"},
        {"model.channels", "16,32"},
        {"model.n_z", "16"},
        {"model.codebook_size", "128"},
        {"model.fcm", "conv"},
        {"model.alpha", "1"},
        {"model.beta", "1"},
        {"model.sigma_mode", "shared"},
        {"model.kernel_size", "3"},
        {"model.sigma_init", "3"},
        {"model.sigma_min", "0.3"},
        {"model.detach_encoder_targets", "false"},
        {"model.ffl_detach_weight", "true"},
        {"model.ffl_normalize_weight", "true"},
        {"model.l2_normalize", "true"},
        {"model.ema", "true"},
        {"model.decay", "0.99"},
        {"model.dead_after", "256"},
        {"model.beta_commit", "0.25"},
        {"cat.layers", "4"},
        {"cat.heads", "4"},
        {"cat.width", "128"},
        {"cat.ff", "512"},
        {"cat.cond_width", "128"},
        {"cat.steps", "2000"},
        {"cat.batch", "16"},
        {"cat.lr", "0.001"},
        {"cat.log_every", "50"},
        {"cat.temperature", "1"},
        {"cat.top_k", "0"},
        {"cat.samples_per_class", "64"},
        {"cat.captions", ""},
    };
    return d;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename N>
N number(const std::string& key, const std::string& v) {
    N out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw UsageError("config: " + key + " = '" + v + "' is not a valid number");
    return out;
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) out.push_back(trim(cur));
    return out;
}

}  // namespace

Config Config::defaults() {
    Config c;
    c.entries_ = default_entries();
    return c;
}

Config Config::parse(const std::string& text) {
    auto c = defaults();
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw UsageError("config line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        const auto key = trim(line.substr(0, eq));
        if (section.empty()) throw UsageError("config line " + std::to_string(lineno) + ": key outside a section");
        c.set(section + "." + key, trim(line.substr(eq + 1)));
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](auto& e) { return e.first == key; });
    if (it == entries_.end()) throw UsageError("config: unknown key '" + key + "'");
    it->second = value;
}

const std::string& Config::get(const std::string& key) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](auto& e) { return e.first == key; });
    if (it == entries_.end()) throw UsageError("config: unknown key '" + key + "'");
    return it->second;
}

int Config::get_int(const std::string& key) const { return number<int>(key, get(key)); }
std::uint64_t Config::get_u64(const std::string& key) const { return number<std::uint64_t>(key, get(key)); }
double Config::get_double(const std::string& key) const { return number<double>(key, get(key)); }

bool Config::get_bool(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError("config: " + key + " = '" + v + "' is not true/false");
}

std::vector<int> Config::get_ints(const std::string& key) const {
    std::vector<int> out;
    for (auto& p : split(get(key))) out.push_back(number<int>(key, p));
    return out;
}

std::string Config::text() const {
    std::ostringstream o;
    std::string section;
    for (auto& [key, value] : entries_) {
        const auto dot = key.find('.');
        const auto s = key.substr(0, dot);
        if (s != section) {
            o << (section.empty() ? "" : "\n") << "[" << s << "]\n";
            section = s;
        }
        o << key.substr(dot + 1) << " = " << value << "\n";
    }
    return o.str();
}

RunConfig RunConfig::from(const Config& c) {
    RunConfig r;
    r.seed = c.get_u64("run.seed");
    r.steps = c.get_int("run.steps");
    r.batch = c.get_int("run.batch");
    r.log_every = c.get_int("run.log_every");
    r.image_every = c.get_int("run.image_every");
    r.eval_count = c.get_int("run.eval_count");
    r.adam = {.lr = c.get_double("run.lr"), .beta1 = c.get_double("run.beta1"), .beta2 = c.get_double("run.beta2"),
              .eps = c.get_double("run.eps")};
    if (r.steps < 0 || r.batch < 1 || r.log_every < 1 || r.image_every < 0 || r.eval_count < 1) {
        throw UsageError("config: run.steps, batch, log_every, image_every or eval_count out of range");
    }

    try {
        r.kind = data::parse_kind(c.get("data.kind"));
    } catch (const ContractError& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    r.n = c.get_int("data.n");
    r.size = c.get_int("data.size");
    r.dir = c.get("data.dir");
    r.data_seed = c.get_u64("data.seed");
    r.eval_seed = c.get_u64("data.eval_seed");
    if (r.kind == data::Kind::pnm_dir && r.dir.empty()) throw UsageError("config: data.dir is required for " + c.get("data.kind"));

    auto& m = r.model;
    m.image_size = r.size;
    m.channels = c.get_ints("model.channels");
    m.n_z = c.get_int("model.n_z");
    m.codebook_size = c.get_int("model.codebook_size");
    const auto levels = m.channels.size();
    auto fcm = split(c.get("model.fcm"));
    try {
        m.fcm.clear();
        for (auto& v : fcm) m.fcm.push_back(model::parse_variant(v));
    } catch (const ContractError& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    if (m.fcm.size() == 1) m.fcm.assign(levels, m.fcm[0]);
    m.kernel_sizes = c.get_ints("model.kernel_size");
    if (m.kernel_sizes.size() == 1) m.kernel_sizes.assign(levels, m.kernel_sizes[0]);
    m.alpha = c.get_double("model.alpha");
    m.beta = c.get_double("model.beta");
    const auto& mode = c.get("model.sigma_mode");
    if (mode != "shared" && mode != "pairwise") throw UsageError("config: model.sigma_mode must be shared or pairwise");
    m.sigma_mode = mode == "shared" ? spectral::SigmaMode::shared : spectral::SigmaMode::pairwise;
    m.sigma_init = c.get_double("model.sigma_init");
    m.sigma_min = c.get_double("model.sigma_min");
    m.detach_encoder_targets = c.get_bool("model.detach_encoder_targets");
    m.ffl_detach_weight = c.get_bool("model.ffl_detach_weight");
    m.ffl_normalize_weight = c.get_bool("model.ffl_normalize_weight");
    m.l2_normalize = c.get_bool("model.l2_normalize");
    m.ema = c.get_bool("model.ema");
    m.decay = c.get_double("model.decay");
    m.dead_after = c.get_int("model.dead_after");
    m.beta_commit = c.get_double("model.beta_commit");
    try {
        m.validate();
    } catch (const ContractError& e) {
        throw UsageError(std::string("config: ") + e.what());
    }

    auto& k = r.cat;
    k.spec.layers = c.get_int("cat.layers");
    k.spec.heads = c.get_int("cat.heads");
    k.spec.width = c.get_int("cat.width");
    k.spec.ff = c.get_int("cat.ff");
    k.spec.cond_width = c.get_int("cat.cond_width");
    k.steps = c.get_int("cat.steps");
    k.batch = c.get_int("cat.batch");
    k.lr = c.get_double("cat.lr");
    k.log_every = c.get_int("cat.log_every");
    k.temperature = c.get_double("cat.temperature");
    k.top_k = c.get_int("cat.top_k");
    k.samples_per_class = c.get_int("cat.samples_per_class");
    k.captions = c.get("cat.captions");
    try {
        k.spec.validate();
    } catch (const ContractError& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    if (k.steps < 0 || k.batch < 1 || k.log_every < 1 || k.samples_per_class < 1 || !(k.temperature > 0) || k.top_k < 0) {
        throw UsageError("config: cat settings out of range");
    }
    r.text = c.text();
    return r;
}

}  // namespace favae::harness
