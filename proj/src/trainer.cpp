#include "recalib/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace recalib {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

using nlohmann::json;

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 2) throw TrainError("batch_size must be >= 2 (batch norm needs it)");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw TrainError("lr must be >= 0");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw TrainError("momentum must be in [0, 1)");
  if (cfg.weight_decay < 0.0) throw TrainError("weight_decay must be >= 0");
  if (!(cfg.gamma > 0.0)) throw TrainError("gamma must be positive");
  if (cfg.epochs < 1) throw TrainError("epochs must be >= 1");
  if (cfg.eval_batch < 1) throw TrainError("eval_batch must be >= 1");
  if (cfg.precision != "float32" && cfg.precision != "float64") {
    throw TrainError("precision must be float32 or float64, got '" + cfg.precision + "'");
  }
  for (std::size_t m : cfg.milestones) {
    if (m >= cfg.epochs) {
      throw TrainError("milestone " + std::to_string(m) + " is not below epochs " +
                       std::to_string(cfg.epochs));
    }
  }
}

std::vector<std::size_t> effective_milestones(const TrainConfig& cfg) {
  if (!cfg.milestones.empty()) return cfg.milestones;
  return {cfg.epochs / 2, cfg.epochs * 3 / 4};
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.lr;
  for (std::size_t m : effective_milestones(cfg)) {
    if (m > 0 && epoch >= m) lr *= cfg.gamma;
  }
  return lr;
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"milestones", c.milestones},
              {"gamma", c.gamma},
              {"seed", c.seed},
              {"precision", c.precision},
              {"augment", c.augment},
              {"decay_bn", c.decay_bn},
              {"decay_block", c.decay_block},
              {"eval_batch", c.eval_batch},
              {"eval_every", c.eval_every}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.milestones = j.at("milestones").get<std::vector<std::size_t>>();
  c.gamma = j.at("gamma").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.precision = j.at("precision").get<std::string>();
  c.augment = j.at("augment").get<bool>();
  c.decay_bn = j.at("decay_bn").get<bool>();
  c.decay_block = j.at("decay_block").get<bool>();
  c.eval_batch = j.at("eval_batch").get<std::size_t>();
  c.eval_every = j.value("eval_every", std::size_t{1});
  return c;
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "epoch,split,loss,top1,top5\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.top1 << ',' << r.top5 << '\n';
  }
  return os.str();
}

namespace {

template <typename T>
const char* dtype_name() {
  return std::is_same_v<T, float> ? "float32" : "float64";
}

template <typename T>
std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

template <typename T>
StoredTensor store(const std::string& name, const Tensor<T>& t) {
  StoredTensor s;
  s.name = name;
  s.dtype = dtype_code<T>();
  s.shape = t.shape();
  s.bytes.resize(t.numel() * sizeof(T));
  std::memcpy(s.bytes.data(), t.data(), s.bytes.size());
  return s;
}

template <typename T>
void load_into(const StoredTensor& s, Tensor<T>& dst) {
  if (s.dtype != dtype_code<T>()) {
    throw TrainError("checkpoint tensor '" + s.name + "' has dtype code " +
                     std::to_string(s.dtype) + ", model expects " + dtype_name<T>());
  }
  if (s.shape != dst.shape()) {
    throw TrainError("checkpoint tensor '" + s.name + "' has shape " + shape_str(s.shape) +
                     ", model expects " + shape_str(dst.shape()));
  }
  std::memcpy(dst.data(), s.bytes.data(), s.bytes.size());
}

template <typename T>
Tensor<T> tensor_from(const StoredTensor& s) {
  Tensor<T> t(s.shape);
  load_into(s, t);
  return t;
}

/// Index of the largest logit ranks 0; ties resolve toward the lower class index.
template <typename T>
std::size_t label_rank(const T* row, std::size_t classes, std::size_t label) {
  const T v = row[label];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < classes; ++j) {
    if (row[j] > v || (row[j] == v && j < label)) ++rank;
  }
  return rank;
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw TrainError("checkpoint RNG state is malformed");
  return rng;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

template <typename T>
void check_data(const Model<T>& model, const DatasetSplit& data, const char* what) {
  if (data.records.empty()) throw TrainError(std::string(what) + " dataset is empty");
  const std::size_t classes = model.spec().num_classes;
  for (const auto& r : data.records) {
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= classes) {
      throw TrainError(std::string(what) + " dataset has label " + std::to_string(r.label) +
                       " but the model has " + std::to_string(classes) + " classes");
    }
  }
}

}  // namespace

template <typename T>
EvalResult evaluate(Model<T>& model, const DatasetSplit& data, std::size_t batch_size,
                    const std::vector<ChannelGate>* gates) {
  check_data(model, data, "evaluation");
  if (batch_size < 1) throw TrainError("evaluation batch size must be >= 1");
  NoGradGuard no_grad;
  EvalResult res;
  const std::size_t classes = model.spec().num_classes;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, data.size());
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> x = make_batch<T>(data, idx);
    const auto labels = batch_labels(data, idx);
    ForwardOptions<T> opt;
    opt.gates = gates;
    const Var<T> logits = model.forward(x, opt);
    const Var<T> loss = softmax_cross_entropy(logits, std::span<const std::int32_t>(labels));
    loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(idx.size());
    const T* L = logits.value().data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t rank = label_rank(L + i * classes, classes, labels[i]);
      res.correct1 += rank == 0;
      res.correct5 += rank < 5;
    }
    res.total += idx.size();
  }
  res.loss = loss_sum / static_cast<double>(res.total);
  return res;
}

template <typename T>
Sgd<T>::Sgd(double momentum, double weight_decay, bool decay_bn, bool decay_block)
    : momentum_coef_(momentum),
      weight_decay_(weight_decay),
      decay_bn_(decay_bn),
      decay_block_(decay_block) {}

template <typename T>
bool Sgd<T>::decays(const Parameter<T>& p) const {
  if (p.in_block() && !decay_block_) return false;
  if ((p.role() == ParamRole::BnGamma || p.role() == ParamRole::BnBeta) && !decay_bn_) {
    return false;
  }
  return true;
}

template <typename T>
void Sgd<T>::step(ParamRegistry<T>& reg, double lr) {
  const T m = static_cast<T>(momentum_coef_);
  const T step = static_cast<T>(lr);
  for (Parameter<T>* p : reg.params) {
    Tensor<T>& w = p->value();
    const Tensor<T>& g = p->grad();
    const T wd = decays(*p) ? static_cast<T>(weight_decay_) : T(0);
    auto it = momentum_.find(p->name());
    const bool first = it == momentum_.end();
    if (first) it = momentum_.emplace(p->name(), Tensor<T>(w.shape(), T(0))).first;
    T* buf = it->second.data();
    T* wp = w.data();
    const bool has_grad = !g.empty();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const T d = (has_grad ? g[i] : T(0)) + wd * wp[i];
      buf[i] = first ? d : m * buf[i] + d;
      wp[i] -= step * buf[i];
    }
  }
}

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

namespace {

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::filesystem::path& path, const char* what) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw TrainError(path.string() + ": truncated checkpoint while reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw TrainError("cannot write checkpoint " + tmp.string());
    os.write("RCKP", 4);
    put<std::uint32_t>(os, kCheckpointVersion);
    const std::string meta = ckpt.meta.dump();
    put<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(os, ckpt.tensors.size());
    for (const auto& t : ckpt.tensors) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
      os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      put<std::uint8_t>(os, t.dtype);
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
      for (std::size_t d : t.shape) put<std::uint64_t>(os, d);
      os.write(reinterpret_cast<const char*>(t.bytes.data()),
               static_cast<std::streamsize>(t.bytes.size()));
    }
    if (!os) throw TrainError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TrainError("cannot open checkpoint " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RCKP", 4) != 0) {
    throw TrainError(path.string() + ": not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(is, path, "version");
  if (version != kCheckpointVersion) {
    throw TrainError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto meta_len = get<std::uint64_t>(is, path, "metadata length");
  if (meta_len > (1u << 26)) throw TrainError(path.string() + ": implausible metadata length");
  std::string meta(meta_len, '\0');
  is.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw TrainError(path.string() + ": truncated checkpoint metadata");
  Checkpoint ckpt;
  try {
    ckpt.meta = json::parse(meta);
  } catch (const json::exception& e) {
    throw TrainError(path.string() + ": metadata is not valid JSON: " + e.what());
  }
  const auto count = get<std::uint64_t>(is, path, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredTensor t;
    const auto name_len = get<std::uint32_t>(is, path, "tensor name length");
    if (name_len > 4096) throw TrainError(path.string() + ": implausible tensor name length");
    t.name.resize(name_len);
    is.read(t.name.data(), name_len);
    t.dtype = get<std::uint8_t>(is, path, "dtype");
    if (t.dtype > 1) throw TrainError(path.string() + ": unknown dtype code in " + t.name);
    const auto ndim = get<std::uint32_t>(is, path, "rank");
    if (ndim == 0 || ndim > 8) throw TrainError(path.string() + ": bad rank for " + t.name);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(is, path, "dims")));
      numel *= t.shape.back();
    }
    const std::size_t elem = t.dtype == 0 ? 4 : 8;
    if (numel == 0 || numel > (std::size_t{1} << 32)) {
      throw TrainError(path.string() + ": bad element count for " + t.name);
    }
    t.bytes.resize(numel * elem);
    is.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
    if (!is) throw TrainError(path.string() + ": truncated data for tensor " + t.name);
    ckpt.tensors.push_back(std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw TrainError(path.string() + ": trailing bytes after the last tensor");
  }
  return ckpt;
}

json to_json(const BlockSpec& s) {
  json j{{"kind", std::string(kind_name(s.kind))},
         {"channels", s.channels},
         {"reduction", s.reduction},
         {"groups", s.groups},
         {"kernel", s.kernel},
         {"se_hidden_relu", s.se_hidden_relu},
         {"se_bias", s.se_bias},
         {"dw_init", s.dw_init}};
  j["use_bn"] = s.use_bn ? json(*s.use_bn) : json(nullptr);
  return j;
}

BlockSpec block_spec_from_json(const json& j) {
  BlockSpec s;
  const auto kind = parse_kind(j.at("kind").get<std::string>());
  if (!kind) throw TrainError("checkpoint names unknown block kind " + j.at("kind").dump());
  s.kind = *kind;
  s.channels = j.at("channels").get<std::size_t>();
  s.reduction = j.at("reduction").get<std::size_t>();
  s.groups = j.at("groups").get<std::size_t>();
  s.kernel = j.at("kernel").get<std::size_t>();
  s.se_hidden_relu = j.at("se_hidden_relu").get<bool>();
  s.se_bias = j.at("se_bias").get<bool>();
  s.dw_init = j.at("dw_init").get<double>();
  if (!j.at("use_bn").is_null()) s.use_bn = j.at("use_bn").get<bool>();
  return s;
}

ModelSpec spec_from_checkpoint(const Checkpoint& ckpt) {
  try {
    const json& m = ckpt.meta;
    std::optional<BlockSpec> block;
    if (!m.at("block").is_null()) block = block_spec_from_json(m.at("block"));
    return build(m.at("model").get<std::string>(), block, m.at("num_classes").get<std::size_t>());
  } catch (const json::exception& e) {
    throw TrainError(std::string("checkpoint metadata incomplete: ") + e.what());
  }
}

Normalization normalization_from_checkpoint(const Checkpoint& ckpt) {
  Normalization n;
  try {
    const json& j = ckpt.meta.at("normalization");
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto std = j.at("std").get<std::vector<double>>();
    if (mean.size() != 3 || std.size() != 3) throw TrainError("normalization needs 3 channels");
    std::copy(mean.begin(), mean.end(), n.mean.begin());
    std::copy(std.begin(), std.end(), n.std.begin());
  } catch (const json::exception& e) {
    throw TrainError(std::string("checkpoint normalization missing: ") + e.what());
  }
  return n;
}

std::string checkpoint_dtype(const Checkpoint& ckpt) {
  return ckpt.meta.value("dtype", std::string("float32"));
}

template <typename T>
Checkpoint make_checkpoint(Model<T>& model, const Sgd<T>* opt, std::size_t epoch,
                           const std::mt19937_64* rng, const TrainConfig& cfg,
                           const Normalization& norm) {
  Checkpoint ck;
  const ModelSpec& spec = model.spec();
  ck.meta = json{{"format", "recalib-checkpoint"},
                 {"model", spec.name},
                 {"num_classes", spec.num_classes},
                 {"epoch", epoch},
                 {"dtype", dtype_name<T>()},
                 {"config", to_json(cfg)},
                 {"normalization",
                  {{"mean", std::vector<double>(norm.mean.begin(), norm.mean.end())},
                   {"std", std::vector<double>(norm.std.begin(), norm.std.end())}}}};
  ck.meta["block"] = spec.block ? to_json(*spec.block) : json(nullptr);
  ck.meta["rng"] = rng ? json(rng_to_string(*rng)) : json(nullptr);
  ParamRegistry<T> reg = model.registry();
  for (Parameter<T>* p : reg.params) ck.tensors.push_back(store("param." + p->name(), p->value()));
  for (const auto& b : reg.buffers) ck.tensors.push_back(store("buffer." + b.name, *b.tensor));
  if (opt) {
    for (const auto& [name, buf] : opt->buffers()) {
      ck.tensors.push_back(store("momentum." + name, buf));
    }
  }
  return ck;
}

template <typename T>
void restore_model(const Checkpoint& ckpt, Model<T>& model) {
  if (checkpoint_dtype(ckpt) != dtype_name<T>()) {
    throw TrainError("checkpoint holds " + checkpoint_dtype(ckpt) + " weights, model is " +
                     dtype_name<T>());
  }
  ParamRegistry<T> reg = model.registry();
  std::set<std::string> expected;
  auto fetch = [&](const std::string& name) -> const StoredTensor& {
    expected.insert(name);
    const StoredTensor* s = ckpt.find(name);
    if (!s) throw TrainError("checkpoint lacks tensor '" + name + "'");
    return *s;
  };
  for (Parameter<T>* p : reg.params) load_into(fetch("param." + p->name()), p->value());
  for (auto& b : reg.buffers) load_into(fetch("buffer." + b.name), *b.tensor);
  for (const auto& t : ckpt.tensors) {
    const bool model_tensor = t.name.starts_with("param.") || t.name.starts_with("buffer.");
    if (model_tensor && !expected.count(t.name)) {
      throw TrainError("checkpoint tensor '" + t.name + "' has no counterpart in the model");
    }
  }
}

template <typename T>
std::unique_ptr<Model<T>> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = std::make_unique<Model<T>>(spec_from_checkpoint(ckpt), 0);
  restore_model(ckpt, *model);
  return model;
}

template <typename T>
TrainResult train(Model<T>& model, const DatasetSplit& data, const DatasetSplit* test,
                  const TrainConfig& cfg, const Checkpoint* resume, const TrainHooks& hooks) {
  validate(cfg);
  if (cfg.precision != dtype_name<T>()) {
    throw TrainError("config precision " + cfg.precision + " does not match model dtype " +
                     dtype_name<T>());
  }
  check_data(model, data, "training");
  if (data.size() < 2) throw TrainError("training set needs at least 2 records");
  std::optional<DatasetSplit> test_view;
  if (test) {
    check_data(model, *test, "test");
    test_view = *test;
    test_view->norm = data.norm;
  }

  Sgd<T> opt(cfg.momentum, cfg.weight_decay, cfg.decay_bn, cfg.decay_block);
  std::mt19937_64 rng(cfg.seed);
  std::size_t start_epoch = 0;
  ParamRegistry<T> reg = model.registry();

  if (resume) {
    restore_model(*resume, model);
    for (Parameter<T>* p : reg.params) {
      if (const StoredTensor* s = resume->find("momentum." + p->name())) {
        opt.buffers().emplace(p->name(), tensor_from<T>(*s));
      }
    }
    const json& r = resume->meta.at("rng");
    if (r.is_null()) throw TrainError("checkpoint has no RNG state; cannot resume");
    rng = rng_from_string(r.get<std::string>());
    start_epoch = resume->meta.at("epoch").get<std::size_t>();
    if (start_epoch > cfg.epochs) {
      throw TrainError("checkpoint is at epoch " + std::to_string(start_epoch) +
                       ", beyond the configured " + std::to_string(cfg.epochs));
    }
  }

  TrainResult result;
  Checkpoint last_good = make_checkpoint(model, &opt, start_epoch, &rng, cfg, data.norm);
  const std::size_t n = data.size();
  const std::size_t classes = model.spec().num_classes;
  std::vector<std::size_t> perm(n);
  std::vector<LabeledImage> augmented;
  std::vector<const LabeledImage*> ptrs;
  std::vector<std::int32_t> labels;

  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct1 = 0, correct5 = 0, step = 0;

    for (std::size_t start = 0; start + 2 <= n; start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(start + cfg.batch_size, n);
      const std::size_t bs = end - start;
      ptrs.clear();
      labels.clear();
      augmented.resize(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        const LabeledImage& rec = data.records[perm[start + i]];
        if (cfg.augment) {
          augmented[i] = augment(rec, rng);
          ptrs.push_back(&augmented[i]);
        } else {
          ptrs.push_back(&rec);
        }
        labels.push_back(rec.label);
      }
      const Tensor<T> x = make_batch<T>(std::span<const LabeledImage* const>(ptrs), data.norm);
      ForwardOptions<T> fo;
      fo.training = true;
      const Var<T> logits = model.forward(x, fo);
      const Var<T> loss = softmax_cross_entropy(logits, std::span<const std::int32_t>(labels));
      double lv = static_cast<double>(loss.value()[0]);
      if (hooks.poison && hooks.poison(epoch, step)) lv = std::numeric_limits<double>::quiet_NaN();
      if (!std::isfinite(lv)) {
        restore_model(last_good, model);
        result.diverged = true;
        result.message = "loss became non-finite at epoch " + std::to_string(epoch + 1) +
                         " step " + std::to_string(step) + "; restored the checkpoint from epoch " +
                         std::to_string(last_good.meta.at("epoch").get<std::size_t>());
        result.checkpoint = std::move(last_good);
        return result;
      }
      for (Parameter<T>* p : reg.params) p->zero_grad();
      backward(loss);
      opt.step(reg, lr);

      loss_sum += lv * static_cast<double>(bs);
      seen += bs;
      const T* L = logits.value().data();
      for (std::size_t i = 0; i < bs; ++i) {
        const std::size_t rank = label_rank(L + i * classes, classes, labels[i]);
        correct1 += rank == 0;
        correct5 += rank < 5;
      }
    }
    for (Parameter<T>* p : reg.params) p->zero_grad();

    const double s = static_cast<double>(seen);
    result.log.push_back({epoch + 1, "train", loss_sum / s, correct1 / s, correct5 / s});
    const bool last = epoch + 1 == cfg.epochs;
    if (test_view && (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0))) {
      const EvalResult ev = evaluate(model, *test_view, cfg.eval_batch);
      result.log.push_back({epoch + 1, "test", ev.loss, ev.top1(), ev.top5()});
    }
    last_good = make_checkpoint(model, &opt, epoch + 1, &rng, cfg, data.norm);
    result.epochs_completed = epoch + 1;
    if (hooks.on_epoch) hooks.on_epoch(result.log);
  }
  result.epochs_completed = cfg.epochs;
  result.checkpoint = std::move(last_good);
  return result;
}

#define RECALIB_INSTANTIATE(T)                                                                  \
  template EvalResult evaluate<T>(Model<T>&, const DatasetSplit&, std::size_t,                  \
                                  const std::vector<ChannelGate>*);                             \
  template class Sgd<T>;                                                                        \
  template Checkpoint make_checkpoint<T>(Model<T>&, const Sgd<T>*, std::size_t,                 \
                                         const std::mt19937_64*, const TrainConfig&,            \
                                         const Normalization&);                                 \
  template void restore_model<T>(const Checkpoint&, Model<T>&);                                 \
  template std::unique_ptr<Model<T>> model_from_checkpoint<T>(const Checkpoint&);               \
  template TrainResult train<T>(Model<T>&, const DatasetSplit&, const DatasetSplit*,            \
                                const TrainConfig&, const Checkpoint*, const TrainHooks&);

RECALIB_INSTANTIATE(float)
RECALIB_INSTANTIATE(double)

}  // namespace recalib
