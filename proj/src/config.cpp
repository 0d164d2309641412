#include "rpr/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "rpr/errors.hpp"

namespace rpr {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("config: bad value '" + v + "' for key " + key);
  }
  return out;
}

template <typename N>
std::string format_number(N x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

template <typename E>
E parse_choice(const std::string& key, const std::string& v, const std::vector<std::pair<std::string, E>>& choices) {
  for (const auto& [name, e] : choices)
    if (name == v) return e;
  std::string allowed;
  for (const auto& c : choices) allowed += (allowed.empty() ? "" : "|") + c.first;
  throw ConfigError("config: bad value '" + v + "' for key " + key + " (expected " + allowed + ")");
}

template <typename E>
std::string choice_name(E e, const std::vector<std::pair<std::string, E>>& choices) {
  for (const auto& [name, c] : choices)
    if (c == e) return name;
  return "?";
}

const std::vector<std::pair<std::string, AttentionPool>> kPools = {{"global", AttentionPool::kGlobal}, {"per_seed", AttentionPool::kPerSeed}};
const std::vector<std::pair<std::string, StemInput>> kStems = {{"ones", StemInput::kOnes}, {"radial", StemInput::kRadial}};
const std::vector<std::pair<std::string, RotationAugment>> kRotAug = {
    {"off", RotationAugment::kOff}, {"z", RotationAugment::kZ}, {"so3", RotationAugment::kSO3}};
const std::vector<std::pair<std::string, KernelPath>> kPaths = {{"factored", KernelPath::kFactored}, {"materialized", KernelPath::kMaterialized}};

struct Entry {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename N, typename Access>
Entry number(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return format_number(access(c)); },
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_number<N>(key, v); }};
}

template <typename E, typename Access>
Entry choice(std::string key, Access access, const std::vector<std::pair<std::string, E>>& choices) {
  return {key, [access, &choices](const RunConfig& c) { return choice_name(access(c), choices); },
          [access, key, &choices](RunConfig& c, const std::string& v) { access(c) = parse_choice(key, v, choices); }};
}

Entry text(std::string key, std::string RunConfig::*field) {
  return {key, [field](const RunConfig& c) { return c.*field; }, [field](RunConfig& c, const std::string& v) { c.*field = v; }};
}

#define RPR_FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      number<Index>("net.n_seeds", RPR_FIELD(net.n_seeds)),
      number<Index>("net.k", RPR_FIELD(net.k)),
      number<Index>("net.channels", RPR_FIELD(net.channels)),
      number<Index>("net.final_channels", RPR_FIELD(net.final_channels)),
      number<Index>("net.descriptor_dim", RPR_FIELD(net.descriptor_dim)),
      number<double>("net.gem_p_init", RPR_FIELD(net.gem_p_init)),
      number<double>("net.ss_sigma", RPR_FIELD(net.ss_sigma)),
      number<Index>("net.kernel_hidden", RPR_FIELD(net.kernel_hidden)),
      number<Index>("net.attention_reduction", RPR_FIELD(net.attention_reduction)),
      number<Index>("net.attention_max_bottleneck", RPR_FIELD(net.attention_max_bottleneck)),
      choice("net.attention_pool", RPR_FIELD(net.attention_pool), kPools),
      choice("net.stem_input", RPR_FIELD(net.stem_input), kStems),
      number<Index>("net.fps_start", RPR_FIELD(net.fps_start)),
      number<double>("triplet.margin", RPR_FIELD(train.triplet.margin)),
      number<double>("triplet.pos_radius", RPR_FIELD(train.triplet.pos_radius)),
      number<double>("triplet.neg_radius", RPR_FIELD(train.triplet.neg_radius)),
      number<double>("augment.jitter_sigma", RPR_FIELD(train.augment.jitter_sigma)),
      number<double>("augment.jitter_clip", RPR_FIELD(train.augment.jitter_clip)),
      number<double>("augment.translation_range", RPR_FIELD(train.augment.translation_range)),
      number<double>("augment.removal_fraction_max", RPR_FIELD(train.augment.removal_fraction_max)),
      number<double>("augment.erase_fraction_max", RPR_FIELD(train.augment.erase_fraction_max)),
      choice("augment.rotation", RPR_FIELD(train.augment.rotation), kRotAug),
      number<double>("augment.rotation_max_angle", RPR_FIELD(train.augment.rotation_max_angle)),
      number<Index>("batch.initial_size", RPR_FIELD(train.batch.current_size)),
      number<Index>("batch.max_size", RPR_FIELD(train.batch.max_size)),
      number<double>("batch.expansion", RPR_FIELD(train.batch.expansion)),
      number<double>("batch.active_ratio_threshold", RPR_FIELD(train.batch.active_ratio_threshold)),
      number<double>("optim.lr", RPR_FIELD(train.optimizer.lr)),
      number<double>("optim.beta1", RPR_FIELD(train.optimizer.beta1)),
      number<double>("optim.beta2", RPR_FIELD(train.optimizer.beta2)),
      number<double>("optim.eps", RPR_FIELD(train.optimizer.eps)),
      number<double>("optim.weight_decay", RPR_FIELD(train.optimizer.weight_decay)),
      number<double>("train.lr_decay", RPR_FIELD(train.lr_decay)),
      number<int>("train.epochs", RPR_FIELD(epochs)),
      number<std::uint64_t>("train.seed", RPR_FIELD(train.seed)),
      number<int>("train.precision", RPR_FIELD(precision)),
      choice("train.kernel_path", RPR_FIELD(kernel_path), kPaths),
      number<Index>("synth.n_places", RPR_FIELD(synth.n_places)),
      number<Index>("synth.variants_per_place", RPR_FIELD(synth.variants_per_place)),
      number<Index>("synth.train_variants", RPR_FIELD(synth.train_variants)),
      number<Index>("synth.points_per_cloud", RPR_FIELD(synth.points_per_cloud)),
      number<std::uint64_t>("synth.structure_seed", RPR_FIELD(synth.structure_seed)),
      number<double>("synth.spacing", RPR_FIELD(synth.spacing)),
      number<double>("synth.scene_extent", RPR_FIELD(synth.scene_extent)),
      number<double>("synth.occlusion_max", RPR_FIELD(synth.occlusion_max)),
      number<double>("synth.jitter", RPR_FIELD(synth.jitter)),
      text("paths.train_manifest", &RunConfig::train_manifest),
      text("paths.test_manifest", &RunConfig::test_manifest),
  };
  return table;
}

#undef RPR_FIELD

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries())
    if (e.key == key) return e;
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

void RunConfig::apply_desk() {
  const RprNetConfig d = RprNetConfig::desk();
  net.n_seeds = d.n_seeds;
  net.k = d.k;
  net.channels = d.channels;
  net.final_channels = d.final_channels;
  net.descriptor_dim = d.descriptor_dim;
}

void RunConfig::validate() const {
  try {
    net.validate();
    train.triplet.validate();
    train.augment.validate();
    train.batch.validate();
    synth.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (precision != 32 && precision != 64) throw ConfigError("config: train.precision must be 32 or 64");
  if (epochs < 0) throw ConfigError("config: train.epochs must be non-negative");
  if (!(train.optimizer.lr > 0.0)) throw ConfigError("config: optim.lr must be positive");
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_entry(trim(key)).set(cfg, trim(value));
}

void apply_setting(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("config: expected key=value, got '" + assignment + "'");
  apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_setting(cfg, line);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str());
  return cfg;
}

std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += e.key + "=" + e.get(cfg) + "\n";
  return out;
}

std::string net_config_to_text(const RprNetConfig& net) {
  RunConfig cfg;
  cfg.net = net;
  std::string out;
  for (const auto& e : entries())
    if (e.key.rfind("net.", 0) == 0) out += e.key + "=" + e.get(cfg) + "\n";
  return out;
}

RprNetConfig net_config_from_text(const std::string& text) {
  RunConfig cfg;
  apply_config_text(cfg, text);
  return cfg.net;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : entries()) keys.push_back(e.key);
  return keys;
}

}  // namespace rpr
