#include "recalib/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace recalib {

template <typename T>
RecalibTrace trace(Model<T>& model, const DatasetSplit& data, std::size_t batch_size) {
  if (model.num_blocks() == 0) {
    throw AblationError("model '" + model.spec().name + "' has no recalibration blocks to trace");
  }
  if (data.records.empty()) throw AblationError("trace needs a non-empty dataset");
  if (batch_size < 1) throw AblationError("batch size must be >= 1");
  NoGradGuard no_grad;
  const auto names = model.block_names();
  std::vector<std::vector<double>> sums(names.size());
  std::vector<Tensor<T>> rec;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, data.size());
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    rec.clear();
    ForwardOptions<T> opt;
    opt.trace = &rec;
    model.forward(make_batch<T>(data, idx), opt);
    for (std::size_t b = 0; b < rec.size(); ++b) {
      const Tensor<T>& p = rec[b];
      const std::size_t N = p.size(0), C = p.size(1);
      const std::size_t inner = p.numel() / (N * C);
      auto& s = sums[b];
      if (s.empty()) s.assign(C, 0.0);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          const T* q = p.data() + (n * C + c) * inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < inner; ++i) acc += static_cast<double>(q[i]);
          s[c] += acc / static_cast<double>(inner);
        }
      }
    }
  }
  RecalibTrace tr;
  tr.samples = data.size();
  for (std::size_t b = 0; b < names.size(); ++b) {
    BlockTrace bt;
    bt.block_id = b;
    bt.layer = names[b];
    bt.samples = data.size();
    bt.mean_p = sums[b];
    for (double& v : bt.mean_p) v /= static_cast<double>(data.size());
    tr.blocks.push_back(std::move(bt));
  }
  return tr;
}

RecalibTrace merge(const RecalibTrace& a, const RecalibTrace& b) {
  if (a.blocks.size() != b.blocks.size()) throw AblationError("traces cover different models");
  RecalibTrace out;
  out.samples = a.samples + b.samples;
  const double wa = static_cast<double>(a.samples), wb = static_cast<double>(b.samples);
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    const BlockTrace& x = a.blocks[i];
    const BlockTrace& y = b.blocks[i];
    if (x.layer != y.layer || x.mean_p.size() != y.mean_p.size()) {
      throw AblationError("traces disagree at block " + std::to_string(i));
    }
    BlockTrace m = x;
    m.samples = out.samples;
    for (std::size_t c = 0; c < m.mean_p.size(); ++c) {
      m.mean_p[c] = (x.mean_p[c] * wa + y.mean_p[c] * wb) / (wa + wb);
    }
    out.blocks.push_back(std::move(m));
  }
  return out;
}

std::vector<HistogramBin> histogram(const RecalibTrace& tr, std::size_t block_id,
                                    std::size_t bins) {
  if (bins < 1) throw AblationError("histogram needs at least one bin");
  if (block_id >= tr.blocks.size()) {
    throw AblationError("unknown block id " + std::to_string(block_id) + " (trace has " +
                        std::to_string(tr.blocks.size()) + " blocks)");
  }
  std::vector<HistogramBin> out(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    out[i].lo = static_cast<double>(i) / static_cast<double>(bins);
    out[i].hi = static_cast<double>(i + 1) / static_cast<double>(bins);
  }
  for (double v : tr.blocks[block_id].mean_p) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    const auto b = std::min(static_cast<std::size_t>(std::floor(clamped * static_cast<double>(bins))),
                            bins - 1);
    ++out[b].count;
  }
  return out;
}

std::string histogram_csv(const std::vector<HistogramBin>& bins) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "bin_lo,bin_hi,count\n";
  for (const auto& b : bins) os << b.lo << ',' << b.hi << ',' << b.count << '\n';
  return os.str();
}

const char* direction_name(Direction d) { return d == Direction::High ? "high" : "low"; }

Direction parse_direction(const std::string& s) {
  if (s == "high") return Direction::High;
  if (s == "low") return Direction::Low;
  throw AblationError("direction must be high or low, got '" + s + "'");
}

std::vector<ChannelGate> make_gates(const RecalibTrace& tr, const ZeroOutPolicy& policy) {
  if (!(policy.x >= 0.0 && policy.x <= 1.0)) {
    throw AblationError("zero-out fraction must lie in [0, 1], got " + std::to_string(policy.x));
  }
  std::vector<ChannelGate> gates;
  for (const BlockTrace& b : tr.blocks) {
    const std::size_t C = b.mean_p.size();
    const auto k = static_cast<std::size_t>(std::lround(policy.x * static_cast<double>(C)));
    ChannelGate g;
    if (policy.per_sample) {
      g.per_sample = true;
      g.per_sample_count = k;
      g.per_sample_high = policy.direction == Direction::High;
    } else {
      std::vector<std::size_t> order(C);
      std::iota(order.begin(), order.end(), std::size_t{0});
      const auto& p = b.mean_p;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
        return policy.direction == Direction::High ? p[a] > p[c] : p[a] < p[c];
      });
      g.zeroed.assign(C, 0);
      for (std::size_t i = 0; i < k; ++i) g.zeroed[order[i]] = 1;
    }
    gates.push_back(std::move(g));
  }
  return gates;
}

template <typename T>
EvalResult zero_out_eval(Model<T>& model, const DatasetSplit& data, const RecalibTrace& tr,
                         const ZeroOutPolicy& policy, std::size_t batch_size) {
  if (model.num_blocks() == 0) throw AblationError("model has no recalibration blocks");
  if (tr.blocks.size() != model.num_blocks()) {
    throw AblationError("trace has " + std::to_string(tr.blocks.size()) + " blocks, model has " +
                        std::to_string(model.num_blocks()));
  }
  if (!is_channelwise(model.spec().block->kind)) {
    throw AblationError(std::string("zero-out needs channel-wise weights; ") +
                        std::string(kind_name(model.spec().block->kind)) +
                        " produces spatial maps");
  }
  const auto gates = make_gates(tr, policy);
  return evaluate(model, data, batch_size, &gates);
}

template <typename T>
std::vector<ZeroOutRow> zero_out_sweep(Model<T>& model, const DatasetSplit& data,
                                       const RecalibTrace& tr, const std::vector<double>& xs,
                                       bool per_sample, std::size_t batch_size) {
  std::vector<ZeroOutRow> rows;
  for (Direction d : {Direction::High, Direction::Low}) {
    for (double x : xs) {
      const EvalResult r = zero_out_eval(model, data, tr, ZeroOutPolicy{x, d, per_sample},
                                         batch_size);
      rows.push_back({x, d, r.top1()});
    }
  }
  return rows;
}

std::string zero_out_csv(const std::vector<ZeroOutRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "x,direction,accuracy\n";
  for (const auto& r : rows) os << r.x << ',' << direction_name(r.direction) << ',' << r.accuracy << '\n';
  return os.str();
}

std::vector<std::string> monotonicity_violations(const std::vector<ZeroOutRow>& rows) {
  std::vector<std::string> out;
  for (Direction d : {Direction::High, Direction::Low}) {
    std::vector<ZeroOutRow> sel;
    for (const auto& r : rows) {
      if (r.direction == d) sel.push_back(r);
    }
    std::stable_sort(sel.begin(), sel.end(),
                     [](const ZeroOutRow& a, const ZeroOutRow& b) { return a.x < b.x; });
    for (std::size_t i = 1; i < sel.size(); ++i) {
      if (sel[i].accuracy > sel[i - 1].accuracy) {
        std::ostringstream os;
        os << direction_name(d) << ": accuracy rises from " << sel[i - 1].accuracy << " at x="
           << sel[i - 1].x << " to " << sel[i].accuracy << " at x=" << sel[i].x;
        out.push_back(os.str());
      }
    }
  }
  return out;
}

template <typename T>
TimingResult time_inference(Model<T>& model, const std::string& variant, std::size_t batch,
                            std::size_t repeats, std::size_t warmup, std::uint64_t seed) {
  if (repeats < 3) throw AblationError("timing needs at least 3 repeats");
  if (batch < 1) throw AblationError("timing batch must be >= 1");
  const ModelSpec& spec = model.spec();
  Tensor<T> x({batch, spec.in_channels, spec.in_height, spec.in_width});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : x.vec()) v = static_cast<T>(dist(rng));

  NoGradGuard no_grad;
  for (std::size_t i = 0; i < warmup; ++i) model.forward(x);
  TimingResult res;
  res.variant = variant;
  res.batch = batch;
  res.repeats = repeats;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    model.forward(x);
    const auto t1 = std::chrono::steady_clock::now();
    res.samples_s.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  const double n = static_cast<double>(repeats);
  res.mean_s = std::accumulate(res.samples_s.begin(), res.samples_s.end(), 0.0) / n;
  double var = 0.0;
  for (double s : res.samples_s) var += (s - res.mean_s) * (s - res.mean_s);
  res.std_s = std::sqrt(var / (n - 1.0));
  std::vector<double> sorted = res.samples_s;
  std::sort(sorted.begin(), sorted.end());
  res.median_s = repeats % 2 ? sorted[repeats / 2]
                             : 0.5 * (sorted[repeats / 2 - 1] + sorted[repeats / 2]);
  ComplexityQuery q;
  q.B = batch;
  res.flops = model_complexity(spec, q).total.flops;
  return res;
}

std::string timing_csv(const std::vector<TimingResult>& rows) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "variant,batch,mean_s,std_s,median_s,flops\n";
  for (const auto& r : rows) {
    os << r.variant << ',' << r.batch << ',' << r.mean_s << ',' << r.std_s << ',' << r.median_s
       << ',' << r.flops << '\n';
  }
  return os.str();
}

#define RECALIB_INSTANTIATE(T)                                                                 \
  template RecalibTrace trace<T>(Model<T>&, const DatasetSplit&, std::size_t);                 \
  template EvalResult zero_out_eval<T>(Model<T>&, const DatasetSplit&, const RecalibTrace&,    \
                                       const ZeroOutPolicy&, std::size_t);                     \
  template std::vector<ZeroOutRow> zero_out_sweep<T>(Model<T>&, const DatasetSplit&,           \
                                                     const RecalibTrace&,                      \
                                                     const std::vector<double>&, bool,         \
                                                     std::size_t);                             \
  template TimingResult time_inference<T>(Model<T>&, const std::string&, std::size_t,          \
                                          std::size_t, std::size_t, std::uint64_t);

RECALIB_INSTANTIATE(float)
RECALIB_INSTANTIATE(double)

}  // namespace recalib
