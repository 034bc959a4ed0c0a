#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "recalib/dataset.hpp"
#include "recalib/model.hpp"

namespace recalib {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Epoch indices where the LR is multiplied by gamma; empty means 50% and 75%.
  std::vector<std::size_t> milestones;
  double gamma = 0.1;
  std::uint64_t seed = 1;
  std::string precision = "float32";  // float32 | float64
  bool augment = true;
  bool decay_bn = false;     // weight decay on BN affine parameters
  bool decay_block = false;  // weight decay on recalibration-block parameters
  std::size_t eval_batch = 250;
  std::size_t eval_every = 1;  // test evaluation period in epochs; 0: final epoch only
};

/// Throws TrainError on batch_size < 2, lr < 0, negative momentum/decay, etc.
void validate(const TrainConfig& cfg);
std::vector<std::size_t> effective_milestones(const TrainConfig& cfg);
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EvalResult {
  std::size_t total = 0;
  std::size_t correct1 = 0;
  std::size_t correct5 = 0;
  double loss = 0.0;

  double top1() const { return static_cast<double>(correct1) / static_cast<double>(total); }
  double top5() const { return static_cast<double>(correct5) / static_cast<double>(total); }
  double top1_error() const { return 1.0 - top1(); }
  double top5_error() const { return 1.0 - top5(); }
};

/// One row of the metric log.
struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  std::string split;      // train | test
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
};

std::string metrics_csv(const std::vector<EpochMetrics>& rows);

/// Inference-mode evaluation. Top-5 is only meaningful with >= 5 classes;
/// with fewer it equals the fraction of samples (all labels rank in the top 5).
template <typename T>
EvalResult evaluate(Model<T>& model, const DatasetSplit& data, std::size_t batch_size = 250,
                    const std::vector<ChannelGate>* gates = nullptr);

/// SGD with heavy-ball momentum: buf = m * buf + (g + wd * w); w -= lr * buf.
template <typename T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay, bool decay_bn, bool decay_block);
  void step(ParamRegistry<T>& reg, double lr);
  std::map<std::string, Tensor<T>>& buffers() { return momentum_; }
  const std::map<std::string, Tensor<T>>& buffers() const { return momentum_; }

  bool decays(const Parameter<T>& p) const;

 private:
  double momentum_coef_;
  double weight_decay_;
  bool decay_bn_;
  bool decay_block_;
  std::map<std::string, Tensor<T>> momentum_;
};

/// Container layout (little-endian):
///   "RCKP" | u32 version | u64 meta length | meta JSON bytes
///   u64 tensor count | per tensor: u32 name length, name, u8 dtype (0 f32, 1 f64),
///   u32 ndim, u64 dims[ndim], raw element bytes.
struct StoredTensor {
  std::string name;
  std::uint8_t dtype = 0;
  Shape shape;
  std::vector<std::uint8_t> bytes;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
};

constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Model parameters ("param.*"), BN buffers ("buffer.*") and, when given,
/// optimizer momentum ("momentum.*") plus metadata.
template <typename T>
Checkpoint make_checkpoint(Model<T>& model, const Sgd<T>* opt, std::size_t epoch,
                           const std::mt19937_64* rng, const TrainConfig& cfg,
                           const Normalization& norm);

/// Loads weights and buffers; throws on any missing, extra or misshapen tensor.
template <typename T>
void restore_model(const Checkpoint& ckpt, Model<T>& model);

template <typename T>
std::unique_ptr<Model<T>> model_from_checkpoint(const Checkpoint& ckpt);

ModelSpec spec_from_checkpoint(const Checkpoint& ckpt);
Normalization normalization_from_checkpoint(const Checkpoint& ckpt);
std::string checkpoint_dtype(const Checkpoint& ckpt);

nlohmann::json to_json(const BlockSpec& spec);
BlockSpec block_spec_from_json(const nlohmann::json& j);

struct TrainResult {
  std::vector<EpochMetrics> log;
  std::size_t epochs_completed = 0;
  bool diverged = false;
  std::string message;
  Checkpoint checkpoint;  // final, or last good one on divergence
};

struct TrainHooks {
  /// Called after each epoch with the metrics appended so far.
  std::function<void(const std::vector<EpochMetrics>&)> on_epoch;
  /// Checked before each batch; returning true injects a NaN loss (tests).
  std::function<bool(std::size_t epoch, std::size_t step)> poison;
};

/// Trains `model` on `train`, evaluating on `test` after each epoch when given
/// (with the training normalization).
/// `resume` continues from a checkpoint produced by an earlier call.
template <typename T>
TrainResult train(Model<T>& model, const DatasetSplit& train, const DatasetSplit* test,
                  const TrainConfig& cfg, const Checkpoint* resume = nullptr,
                  const TrainHooks& hooks = {});

}  // namespace recalib
