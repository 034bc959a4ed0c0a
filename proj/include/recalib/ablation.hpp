#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recalib/complexity.hpp"
#include "recalib/trainer.hpp"

namespace recalib {

class AblationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BlockTrace {
  std::size_t block_id = 0;
  std::string layer;
  std::vector<double> mean_p;  // per channel; spatial maps are averaged over H x W too
  std::size_t samples = 0;
};

struct RecalibTrace {
  std::vector<BlockTrace> blocks;
  std::size_t samples = 0;
};

/// Per-channel mean of the applied weights p over every sample of `data`.
template <typename T>
RecalibTrace trace(Model<T>& model, const DatasetSplit& data, std::size_t batch_size = 250);

/// Sample-weighted mean of two traces of the same model.
RecalibTrace merge(const RecalibTrace& a, const RecalibTrace& b);

struct HistogramBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
};

/// Uniform bins over [0, 1]; value v lands in min(floor(v * bins), bins - 1).
std::vector<HistogramBin> histogram(const RecalibTrace& tr, std::size_t block_id,
                                    std::size_t bins);
std::string histogram_csv(const std::vector<HistogramBin>& bins);

enum class Direction { High, Low };
const char* direction_name(Direction d);
Direction parse_direction(const std::string& s);

struct ZeroOutPolicy {
  double x = 0.0;  // fraction in [0, 1]
  Direction direction = Direction::High;
  bool per_sample = false;  // rank each sample's own p instead of the averaged trace
};

/// round(x * C) channels per block, chosen by the averaged trace (stable on ties).
std::vector<ChannelGate> make_gates(const RecalibTrace& tr, const ZeroOutPolicy& policy);

template <typename T>
EvalResult zero_out_eval(Model<T>& model, const DatasetSplit& data, const RecalibTrace& tr,
                         const ZeroOutPolicy& policy, std::size_t batch_size = 250);

struct ZeroOutRow {
  double x = 0.0;
  Direction direction = Direction::High;
  double accuracy = 0.0;
};

template <typename T>
std::vector<ZeroOutRow> zero_out_sweep(Model<T>& model, const DatasetSplit& data,
                                       const RecalibTrace& tr, const std::vector<double>& xs,
                                       bool per_sample = false, std::size_t batch_size = 250);

std::string zero_out_csv(const std::vector<ZeroOutRow>& rows);

/// Directions whose accuracy rises somewhere along increasing x.
std::vector<std::string> monotonicity_violations(const std::vector<ZeroOutRow>& rows);

struct TimingResult {
  std::string variant;
  std::size_t batch = 0;
  std::size_t repeats = 0;
  double mean_s = 0.0;
  double std_s = 0.0;
  double median_s = 0.0;
  std::uint64_t flops = 0;  // paper convention at this batch size
  std::vector<double> samples_s;
};

/// Wall-clock inference time of one batch: `warmup` untimed passes, then
/// `repeats` timed ones on a monotonic clock. repeats < 3 is rejected.
template <typename T>
TimingResult time_inference(Model<T>& model, const std::string& variant, std::size_t batch,
                            std::size_t repeats, std::size_t warmup = 5, std::uint64_t seed = 0);

std::string timing_csv(const std::vector<TimingResult>& rows);

}  // namespace recalib
