#include "flop/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "flop/errors.hpp"

namespace flop {

using nlohmann::json;

namespace {

// Reads keys of one object, rejecting anything not consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw FormatError(where_ + ": expected an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() == 0) finish();
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw FormatError("expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw FormatError("expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw FormatError("expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw FormatError("expected a string");
      }
      out = it->template get<T>();
    } catch (const std::exception& e) {
      throw FormatError(where_ + "." + key + ": " + e.what());
    }
  }

  void get(const char* key, std::optional<std::size_t>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_null()) {
      out.reset();
    } else if (it->is_number_unsigned()) {
      out = it->get<std::size_t>();
    } else {
      throw FormatError(where_ + "." + key + ": expected a non-negative integer or null");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw FormatError("unknown config key '" + where_ + "." + key + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void from(const json& j, ModelSection& m) {
  ObjectReader r(j, "model");
  r.get("embed_dim", m.embed_dim);
  r.get("hidden", m.hidden);
  r.get("layers", m.layers);
  r.get("rank", m.rank);
  r.get("embedding", m.embedding);
  r.get("cluster_boundaries", m.cluster_boundaries);
  r.get("tied", m.tied);
  r.get("alpha_init", m.alpha_init);
  r.get("alpha_jitter", m.alpha_jitter);
  r.get("hc_l", m.hc_l);
  r.get("hc_r", m.hc_r);
  r.get("hc_beta", m.hc_beta);
}

void from(const json& j, TrainSection& t) {
  ObjectReader r(j, "train");
  r.get("batch_size", t.batch_size);
  r.get("unroll", t.unroll);
  r.get("total_steps", t.total_steps);
  r.get("warmup_steps", t.warmup_steps);
  r.get("lr", t.lr);
  r.get("lr_ramp", t.lr_ramp);
  r.get("momentum", t.momentum);
  r.get("weight_decay", t.weight_decay);
  r.get("clip_norm", t.clip_norm);
  r.get("gate_lr", t.gate_lr);
  r.get("gate_beta1", t.gate_beta1);
  r.get("gate_beta2", t.gate_beta2);
  r.get("kept_value", t.kept_value);
}

void from(const json& j, ControllerSection& c) {
  ObjectReader r(j, "controller");
  r.get("target_compression", c.target_compression);
  r.get("basis", c.basis);
  r.get("mode", c.mode);
  r.get("lr_lambda", c.lr_lambda);
  r.get("anneal_steps", c.anneal_steps);
  r.get("anneal_fraction", c.anneal_fraction);
  r.get("normalize", c.normalize);
  r.get("fixed_lambda", c.fixed_lambda);
  r.get("agp_l1", c.agp_l1);
  r.get("agp_frequency", c.agp_frequency);
}

json to(const ModelSection& m) {
  return {{"embed_dim", m.embed_dim},     {"hidden", m.hidden},
          {"layers", m.layers},           {"rank", m.rank},
          {"embedding", m.embedding},     {"cluster_boundaries", m.cluster_boundaries},
          {"tied", m.tied},               {"alpha_init", m.alpha_init},
          {"alpha_jitter", m.alpha_jitter}, {"hc_l", m.hc_l},
          {"hc_r", m.hc_r},               {"hc_beta", m.hc_beta}};
}

json to(const TrainSection& t) {
  return {{"batch_size", t.batch_size},
          {"unroll", t.unroll},
          {"total_steps", t.total_steps},
          {"warmup_steps", t.warmup_steps ? json(*t.warmup_steps) : json(nullptr)},
          {"lr", t.lr},
          {"lr_ramp", t.lr_ramp},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"clip_norm", t.clip_norm},
          {"gate_lr", t.gate_lr},
          {"gate_beta1", t.gate_beta1},
          {"gate_beta2", t.gate_beta2},
          {"kept_value", t.kept_value}};
}

json to(const ControllerSection& c) {
  return {{"target_compression", c.target_compression},
          {"basis", c.basis},
          {"mode", c.mode},
          {"lr_lambda", c.lr_lambda},
          {"anneal_steps", c.anneal_steps},
          {"anneal_fraction", c.anneal_fraction},
          {"normalize", c.normalize},
          {"fixed_lambda", c.fixed_lambda},
          {"agp_l1", c.agp_l1},
          {"agp_frequency", c.agp_frequency}};
}

}  // namespace

KeptValue parse_kept_value(const std::string& s) {
  if (s == "rectified-mean") return KeptValue::rectified_mean;
  if (s == "open-probability") return KeptValue::open_probability;
  if (s == "one") return KeptValue::one;
  throw FormatError("unknown kept_value '" + s + "' (expected rectified-mean, open-probability or one)");
}

RunConfig RunConfig::parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  {
    ObjectReader r(j, "config");
    r.get("corpus", c.corpus);
    r.get("symbol_mode", c.symbol_mode);
    r.get("splits", c.splits);
    r.get("method", c.method);
    r.get("seed", c.seed);
    r.get("out_dir", c.out_dir);
    if (const json* m = r.child("model")) from(*m, c.model);
    if (const json* t = r.child("train")) from(*t, c.train);
    if (const json* k = r.child("controller")) from(*k, c.controller);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::render() const {
  json j = {{"corpus", corpus},         {"symbol_mode", symbol_mode},   {"splits", splits},
            {"method", method},         {"model", to(model)},           {"train", to(train)},
            {"controller", to(controller)}, {"seed", seed},             {"out_dir", out_dir}};
  // Shortest round-trip float formatting keeps parse(render(c)) == c.
  return j.dump(2) + "\n";
}

void RunConfig::validate() const {
  parse_method(method);
  symbols();
  split_fractions();
  parse_kept_value(train.kept_value);
  if (model.embedding != "adaptive" && model.embedding != "dense")
    throw FormatError("model.embedding must be 'adaptive' or 'dense'");
  if (model.hidden == 0 || model.embed_dim == 0 || model.layers == 0)
    throw FormatError("model dimensions must be positive");
  if (train.batch_size == 0 || train.unroll == 0) throw FormatError("train.batch_size and train.unroll must be positive");
  if (!(controller.target_compression >= 0.0 && controller.target_compression < 1.0))
    throw FormatError("controller.target_compression must lie in [0, 1)");
  if (controller.basis != "prunable" && controller.basis != "total")
    throw FormatError("controller.basis must be 'prunable' or 'total'");
  if (controller.mode != "lagrangian" && controller.mode != "fixed-lambda")
    throw FormatError("controller.mode must be 'lagrangian' or 'fixed-lambda'");
  if (!(controller.anneal_fraction > 0.0 && controller.anneal_fraction <= 1.0))
    throw FormatError("controller.anneal_fraction must lie in (0, 1]");
}

SplitFractions RunConfig::split_fractions() const {
  if (splits.size() != 3) throw FormatError("splits must list train, valid and test fractions");
  return {splits[0], splits[1], splits[2]};
}

SymbolMode RunConfig::symbols() const {
  if (symbol_mode == "bytes") return SymbolMode::bytes;
  if (symbol_mode == "utf8") return SymbolMode::utf8;
  throw FormatError("symbol_mode must be 'bytes' or 'utf8'");
}

ModelConfig RunConfig::model_config(std::size_t vocab) const {
  ModelConfig m;
  m.vocab = vocab;
  m.embed_dim = model.embed_dim;
  m.hidden = model.hidden;
  m.layers = model.layers;
  m.rank = model.rank;
  m.embedding = model.embedding == "dense" ? EmbeddingKind::dense : EmbeddingKind::adaptive;
  m.cluster_boundaries = model.cluster_boundaries;
  m.tied = model.tied;
  m.method = parse_method(method);
  m.init.alpha_init = model.alpha_init;
  m.init.alpha_jitter = model.alpha_jitter;
  m.init.hc = {model.hc_l, model.hc_r, model.hc_beta};
  if (m.method == Method::fac) m = fac_config(m, controller.target_compression);
  return m;
}

TrainerOptions RunConfig::trainer_options() const {
  TrainerOptions o;
  o.batch_size = train.batch_size;
  o.unroll = train.unroll;
  o.total_steps = train.total_steps;
  o.warmup_steps = train.warmup_steps;
  o.lr = train.lr;
  o.lr_ramp = train.lr_ramp;
  o.momentum = train.momentum;
  o.weight_decay = train.weight_decay;
  o.clip_norm = train.clip_norm;
  o.gate_lr = train.gate_lr;
  o.gate_beta1 = train.gate_beta1;
  o.gate_beta2 = train.gate_beta2;
  o.kept_value = parse_kept_value(train.kept_value);
  o.target_compression = controller.target_compression;
  o.basis = controller.basis == "total" ? CompressionBasis::total : CompressionBasis::prunable;
  o.controller.mode = controller.mode == "fixed-lambda" ? ControllerMode::fixed_lambda : ControllerMode::lagrangian;
  o.controller.lr_lambda = controller.lr_lambda;
  o.controller.anneal_steps = controller.anneal_steps;
  o.controller.normalize = controller.normalize;
  o.controller.fixed_lambda = controller.fixed_lambda;
  o.anneal_fraction = controller.anneal_fraction;
  o.agp_l1 = controller.agp_l1;
  o.agp_frequency = controller.agp_frequency;
  o.seed = seed;
  if (parse_method(method) == Method::fac) o.warmup_steps = 0;
  return o;
}

}  // namespace flop
