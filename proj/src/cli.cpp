#include "recalib/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <type_traits>

#include "CLI11.hpp"
#include "recalib/ablation.hpp"

namespace recalib {
namespace {

namespace fs = std::filesystem;

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename F>
auto validating(F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw ValidationError(e.what());
  }
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : sep) + x;
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string help_footer() {
  std::string s = "Block kinds: " + join(all_kind_names(), ", ") + "\n";
  s += "Design letters: a-o (a=SE, b=AB_PLUS without BN, c=AB_PLUS, d=AB, e=ONLY_GAP, f=GAP_BN,\n";
  s += "  g=GLOBAL_DW_WAVG, h=GLOBAL_WAVG, i/k=FINE_CONV k3/k7, j/l=FINE_DWCONV k3/k7,\n";
  s += "  m=COMBINED_GAP, n=COMBINED_AB, o=COMBINED_AB_PLUS); 'none' or 'baseline' for no block\n";
  s += "Models: " + join(model_names(), ", ") + "\n";
  s += "Config: --config FILE (TOML, one [subcommand] table). Precedence: command-line flag >\n";
  s += "  config file value > built-in default. Unknown keys are rejected.\n";
  s += "Exit codes: 0 success, 1 validation error, 2 runtime failure.";
  return s;
}

// ---------------------------------------------------------------- options

struct ModelOpts {
  std::string model = "resnet20";
  std::string block = "none";
  std::size_t r = 16, groups = 1, kernel = 3;
  std::string bn = "auto";
  std::size_t classes = 0;
  CLI::Option *r_opt = nullptr, *g_opt = nullptr, *k_opt = nullptr;

  void add(CLI::App* app, bool with_block = true) {
    app->add_option("--model", model, "Network: " + join(model_names(), ", "))
        ->capture_default_str();
    app->add_option("--classes", classes, "Number of classes (0: from the data; without data 100 for CIFAR models, 1000 for ImageNet ones)");
    if (!with_block) return;
    app->add_option("--block", block, "Block kind name, design letter, or none")
        ->capture_default_str();
    r_opt = app->add_option("--r", r, "SE reduction ratio");
    g_opt = app->add_option("--groups", groups, "GROUPED: number of groups G");
    k_opt = app->add_option("--kernel", kernel, "Kernel size of fine-grained kinds");
    app->add_option("--bn", bn, "Batch norm inside the block: auto, on, off")
        ->check(CLI::IsMember({"auto", "on", "off"}))
        ->capture_default_str();
  }

  std::optional<BlockSpec> block_spec(const std::string& token) const {
    std::optional<BlockSpec> b = parse_design(token);
    if (!b) return b;
    if (r_opt && r_opt->count()) b->reduction = r;
    if (g_opt && g_opt->count()) b->groups = groups;
    if (k_opt && k_opt->count()) b->kernel = kernel;
    if (bn != "auto") b->use_bn = bn == "on";
    return b;
  }

  std::optional<BlockSpec> block_spec() const {
    auto b = block_spec(block);
    if (!b && ((r_opt && r_opt->count()) || (g_opt && g_opt->count()) ||
               (k_opt && k_opt->count()) || bn != "auto")) {
      throw ValidationError("block hyperparameters given without a block (--block)");
    }
    return b;
  }

  std::size_t resolve_classes(std::size_t data_classes) const {
    if (classes != 0) {
      if (data_classes != 0 && classes != data_classes) {
        throw ValidationError("--classes " + std::to_string(classes) + " does not match the " +
                              std::to_string(data_classes) + "-class dataset");
      }
      return classes;
    }
    if (data_classes != 0) return data_classes;
    return build(model, std::nullopt, 10).stem == StemType::ImageNet ? 1000 : 100;
  }
};

struct DataOpts {
  std::string path;
  std::string flavor = "c10";
  std::size_t subset = 0, test_subset = 0;
  std::size_t synthetic = 0, synthetic_test = 500;
  std::uint64_t data_seed = 0;

  void add(CLI::App* app) {
    app->add_option("--data", path, "CIFAR binary file or directory");
    app->add_option("--flavor", flavor, "c10 or c100")
        ->check(CLI::IsMember({"c10", "c100", "cifar10", "cifar100"}))
        ->capture_default_str();
    app->add_option("--subset", subset, "Class-balanced training subset size (0: all)");
    app->add_option("--test-subset", test_subset, "Class-balanced test subset size (0: all)");
    app->add_option("--synthetic", synthetic, "Use N synthetic toy training images instead of CIFAR");
    app->add_option("--synthetic-test", synthetic_test, "Synthetic test images")
        ->capture_default_str();
    app->add_option("--data-seed", data_seed, "Seed for subsets and synthetic data");
  }

  void check() const {
    if (synthetic == 0 && path.empty()) {
      throw ValidationError("no dataset: pass --data PATH or --synthetic N");
    }
    if (synthetic != 0 && !path.empty()) throw ValidationError("--data and --synthetic exclude each other");
    if (synthetic != 0 && synthetic_test == 0) throw ValidationError("--synthetic-test must be positive");
  }

  std::size_t classes() const {
    return synthetic ? 10 : flavor_classes(validating([&] { return parse_flavor(flavor); }));
  }

  DatasetSplit train() const {
    if (synthetic) return synthetic_dataset(synthetic, 10, 2 * data_seed + 1, SplitTag::Train);
    DatasetSplit s = load_cifar(path, parse_flavor(flavor), SplitTag::Train);
    return subset ? recalib::subset(s, subset, data_seed) : s;
  }

  DatasetSplit test() const {
    if (synthetic) return synthetic_dataset(synthetic_test, 10, 2 * data_seed + 2, SplitTag::Test);
    DatasetSplit s = load_cifar(path, parse_flavor(flavor), SplitTag::Test);
    return test_subset ? recalib::subset(s, test_subset, data_seed) : s;
  }
};

void add_train_opts(CLI::App* app, TrainConfig& c) {
  app->add_option("--epochs", c.epochs)->capture_default_str();
  app->add_option("--batch-size", c.batch_size)->capture_default_str();
  app->add_option("--lr", c.lr)->capture_default_str();
  app->add_option("--momentum", c.momentum)->capture_default_str();
  app->add_option("--weight-decay", c.weight_decay)->capture_default_str();
  app->add_option("--milestones", c.milestones, "LR drop epochs (default: 50% and 75%)")
      ->delimiter(',');
  app->add_option("--gamma", c.gamma)->capture_default_str();
  app->add_option("--seed", c.seed, "Seed for initialization, shuffling and augmentation")
      ->capture_default_str();
  app->add_option("--precision", c.precision)
      ->check(CLI::IsMember({"float32", "float64"}))
      ->capture_default_str();
  app->add_flag("--augment,!--no-augment", c.augment, "Random crop and flip")->capture_default_str();
  app->add_flag("--decay-bn", c.decay_bn, "Weight decay on BN affine parameters");
  app->add_flag("--decay-block", c.decay_block, "Weight decay on block parameters");
  app->add_option("--eval-batch", c.eval_batch)->capture_default_str();
  app->add_option("--eval-every", c.eval_every, "Test evaluation period in epochs (0: last only)")
      ->capture_default_str();
}

// ---------------------------------------------------------------- outputs

/// Files are written as <name>.tmp and renamed only after all succeeded.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

  void text(const std::string& name, std::string content) {
    items_.push_back({name, std::move(content), std::nullopt});
  }
  void checkpoint(const std::string& name, Checkpoint c) {
    items_.push_back({name, {}, std::move(c)});
  }

  std::vector<fs::path> commit() {
    std::vector<fs::path> tmps, finals;
    try {
      fs::create_directories(dir_);
      for (auto& it : items_) {
        const fs::path final_path = dir_ / it.name;
        const fs::path tmp = final_path.string() + ".tmp";
        tmps.push_back(tmp);
        finals.push_back(final_path);
        if (it.ckpt) {
          save_checkpoint(*it.ckpt, tmp);
        } else {
          std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
          os << it.content;
          os.close();
          if (!os) throw std::runtime_error("cannot write " + tmp.string());
        }
      }
      for (std::size_t i = 0; i < tmps.size(); ++i) fs::rename(tmps[i], finals[i]);
    } catch (...) {
      std::error_code ec;
      for (const auto& t : tmps) fs::remove(t, ec);
      throw;
    }
    return finals;
  }

 private:
  struct Item {
    std::string name;
    std::string content;
    std::optional<Checkpoint> ckpt;
  };
  fs::path dir_;
  std::vector<Item> items_;
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

template <typename F>
auto with_precision(const std::string& precision, F&& f) {
  if (precision == "float64") return f(std::type_identity<double>{});
  return f(std::type_identity<float>{});
}

Checkpoint read_checkpoint(const std::string& path) {
  if (path.empty()) throw ValidationError("--checkpoint is required");
  return load_checkpoint(path);
}

DatasetSplit eval_split(const DataOpts& d, const std::string& which, const Checkpoint& ck) {
  d.check();
  DatasetSplit s = which == "train" ? d.train() : d.test();
  s.norm = normalization_from_checkpoint(ck);
  return s;
}

// ---------------------------------------------------------------- commands

struct CountArgs {
  ModelOpts m;
  std::size_t batch = 1, bytes = 4, layers = 0, channels = 0;
  std::string flop_convention = "mac";
  std::string out_dir;
};

int cmd_count(const CountArgs& a, std::ostream& out) {
  ComplexityQuery q;
  q.B = a.batch;
  q.bytes_per_element = a.bytes;
  q.flop_convention = a.flop_convention == "2mac" ? FlopConvention::MacAsTwo : FlopConvention::MacAsOne;
  if (a.batch == 0 || a.bytes == 0) throw ValidationError("--batch and --bytes must be positive");

  Outputs files(a.out_dir.empty() ? fs::path(".") : fs::path(a.out_dir));
  if (a.channels) {
    const auto b = a.m.block_spec();
    if (!b) throw ValidationError("--channels needs a --block");
    validate(*b, a.channels);
    std::ostringstream csv;
    csv << "convention,params,flops,rtm_bytes,source\n";
    for (Convention c : {Convention::Paper, Convention::Exact}) {
      q.mode = c;
      q.C = a.channels;
      const BlockExtra e = block_extra(*b, q);
      csv << convention_name(c) << ',' << e.cost.params << ',' << e.cost.flops << ','
          << e.cost.rtm << ',' << (e.from_closed_form ? "closed_form" : "graph_walk") << '\n';
      if (!e.notice.empty()) out << "note: " << e.notice << '\n';
      if (c == Convention::Paper && closed_form(*b, q)) {
        const CrossCheck cc = crosscheck(*b, q);
        out << "closed form vs graph walk: " << (cc.agree ? "agree" : "DISAGREE " + cc.diff) << '\n';
      }
    }
    out << csv.str();
    files.text("block_count.csv", csv.str());
  } else {
    const std::size_t classes = a.m.resolve_classes(0);
    const ModelSpec spec = build(a.m.model, a.m.block_spec(), classes);
    for (Convention c : {Convention::Paper, Convention::Exact}) {
      q.mode = c;
      const ComplexityReport rep = model_complexity(spec, q);
      out << to_text(rep, a.layers) << '\n';
      files.text(std::string("count_") + convention_name(c) + ".csv", to_csv(rep));
    }
  }
  if (!a.out_dir.empty()) {
    for (const auto& p : files.commit()) out << "wrote " << p.string() << '\n';
  }
  return kExitOk;
}

struct TrainArgs {
  ModelOpts m;
  DataOpts d;
  TrainConfig cfg;
  std::string out_dir = ".";
  std::string resume;
  std::string checkpoint_name = "model.ckpt";
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  validating([&] { validate(a.cfg); });
  a.d.check();
  const std::size_t classes = a.m.resolve_classes(a.d.classes());
  const ModelSpec spec = build(a.m.model, a.m.block_spec(), classes);
  const DatasetSplit train_set = a.d.train();
  const DatasetSplit test_set = a.d.test();
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = load_checkpoint(a.resume);

  return with_precision(a.cfg.precision, [&]<typename T>(std::type_identity<T>) {
    Model<T> model(spec, a.cfg.seed);
    TrainHooks hooks;
    hooks.on_epoch = [&](const std::vector<EpochMetrics>& log) {
      for (auto it = log.rbegin(); it != log.rend() && it->epoch == log.back().epoch; ++it) {
        out << "epoch " << it->epoch << ' ' << it->split << " loss=" << it->loss
            << " top1=" << it->top1 << '\n';
      }
    };
    TrainResult r = train(model, train_set, &test_set, a.cfg, resume ? &*resume : nullptr, hooks);
    if (r.diverged) {
      err << "error: " << r.message << '\n';
      return static_cast<int>(kExitRuntime);
    }
    for (const auto& row : r.log) {
      if (row.split == "test" && row.epoch == r.log.back().epoch) {
        out << "final test top1=" << fmt(row.top1) << " top5=" << fmt(row.top5)
            << " loss=" << fmt(row.loss) << '\n';
      }
    }
    Outputs files(a.out_dir);
    files.text("train_metrics.csv", metrics_csv(r.log));
    files.checkpoint(a.checkpoint_name, std::move(r.checkpoint));
    for (const auto& p : files.commit()) out << "wrote " << p.string() << '\n';
    return static_cast<int>(kExitOk);
  });
}

struct EvalArgs {
  DataOpts d;
  std::string checkpoint, split = "test", out_dir;
  std::size_t batch = 250;
};

std::string eval_csv(const std::string& split, const EvalResult& e) {
  return "split,total,loss,top1,top5\n" + split + ',' + std::to_string(e.total) + ',' +
         fmt(e.loss) + ',' + fmt(e.top1()) + ',' + fmt(e.top5()) + '\n';
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.batch == 0) throw ValidationError("--batch must be positive");
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  const DatasetSplit data = eval_split(a.d, a.split, ck);
  const EvalResult e = with_precision(checkpoint_dtype(ck), [&]<typename T>(std::type_identity<T>) {
    auto model = model_from_checkpoint<T>(ck);
    return evaluate(*model, data, a.batch);
  });
  out << a.split << " top1=" << fmt(e.top1()) << " top5=" << fmt(e.top5()) << " loss=" << fmt(e.loss)
      << '\n';
  if (!a.out_dir.empty()) {
    Outputs files(a.out_dir);
    files.text("eval.csv", eval_csv(a.split, e));
    for (const auto& p : files.commit()) out << "wrote " << p.string() << '\n';
  }
  return kExitOk;
}

struct TraceArgs {
  DataOpts d;
  std::string checkpoint, split = "test", out_dir = ".";
  std::size_t bins = 10, block_id = 0, batch = 250;
};

int cmd_trace(const TraceArgs& a, std::ostream& out) {
  if (a.bins == 0) throw ValidationError("--bins must be >= 1");
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  const ModelSpec spec = spec_from_checkpoint(ck);
  if (!spec.block) throw ValidationError("checkpoint model has no recalibration blocks");
  if (a.block_id >= residual_units(spec).size()) {
    throw ValidationError("--block-id " + std::to_string(a.block_id) + " out of range (model has " +
                          std::to_string(residual_units(spec).size()) + " blocks)");
  }
  const DatasetSplit data = eval_split(a.d, a.split, ck);
  const RecalibTrace tr = with_precision(checkpoint_dtype(ck), [&]<typename T>(std::type_identity<T>) {
    auto model = model_from_checkpoint<T>(ck);
    return trace(*model, data, a.batch);
  });
  std::ostringstream csv;
  csv << std::setprecision(std::numeric_limits<double>::max_digits10);
  csv << "block_id,layer,channel,mean_p\n";
  for (const auto& b : tr.blocks)
    for (std::size_t c = 0; c < b.mean_p.size(); ++c)
      csv << b.block_id << ',' << b.layer << ',' << c << ',' << b.mean_p[c] << '\n';
  const auto hist = histogram(tr, a.block_id, a.bins);
  out << "block " << a.block_id << " (" << tr.blocks[a.block_id].layer << "), " << tr.samples
      << " samples\n" << histogram_csv(hist);
  Outputs files(a.out_dir);
  files.text("trace.csv", csv.str());
  files.text("histogram.csv", histogram_csv(hist));
  for (const auto& p : files.commit()) out << "wrote " << p.string() << '\n';
  return kExitOk;
}

struct ZeroArgs {
  DataOpts d;
  std::string checkpoint, split = "test", out_dir, direction = "both";
  std::vector<double> xs{0, 5, 10, 15, 20, 25};
  bool per_sample = false;
  std::size_t batch = 250;
};

int cmd_zero(const ZeroArgs& a, std::ostream& out) {
  if (a.xs.empty()) throw ValidationError("--x needs at least one value");
  for (double x : a.xs) {
    if (!(x >= 0.0 && x <= 100.0)) {
      throw ValidationError("--x values are percentages in [0, 100], got " + fmt(x));
    }
  }
  std::vector<double> fractions;
  for (double x : a.xs) fractions.push_back(x / 100.0);
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  const DatasetSplit data = eval_split(a.d, a.split, ck);
  std::vector<ZeroOutRow> rows =
      with_precision(checkpoint_dtype(ck), [&]<typename T>(std::type_identity<T>) {
        auto model = model_from_checkpoint<T>(ck);
        const RecalibTrace tr = trace(*model, data, a.batch);
        return zero_out_sweep(*model, data, tr, fractions, a.per_sample, a.batch);
      });
  if (a.direction != "both") {
    const Direction keep = parse_direction(a.direction);
    std::erase_if(rows, [&](const ZeroOutRow& r) { return r.direction != keep; });
  }
  for (auto& r : rows) r.x *= 100.0;
  const std::string csv = zero_out_csv(rows);
  out << csv;
  for (const auto& v : monotonicity_violations(rows)) out << "warning: non-monotone " << v << '\n';
  if (!a.out_dir.empty()) {
    Outputs files(a.out_dir);
    files.text("zero_out.csv", csv);
    for (const auto& p : files.commit()) out << "wrote " << p.string() << '\n';
  }
  return kExitOk;
}

struct AblateArgs {
  ModelOpts m;
  DataOpts d;
  TrainConfig cfg;
  std::string designs, out_dir = ".";
};

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  validating([&] { validate(a.cfg); });
  a.d.check();
  const auto tokens = split_list(a.designs);
  if (tokens.empty()) throw ValidationError("--designs needs a comma-separated list");
  const std::size_t classes = a.m.resolve_classes(a.d.classes());
  std::vector<std::pair<std::string, ModelSpec>> specs;
  for (const auto& t : tokens) specs.emplace_back(t, build(a.m.model, a.m.block_spec(t), classes));
  const DatasetSplit train_set = a.d.train();
  const DatasetSplit test_set = a.d.test();

  std::ostringstream csv;
  csv << std::setprecision(std::numeric_limits<double>::max_digits10);
  csv << "design,block,params,flops,train_loss,test_loss,top1,top5\n";
  for (const auto& [token, spec] : specs) {
    ComplexityQuery exact;
    exact.mode = Convention::Exact;
    const auto params = model_complexity(spec, exact).total.params;
    const auto flops = model_complexity(spec, ComplexityQuery{}).total.flops;
    const int rc = with_precision(a.cfg.precision, [&]<typename T>(std::type_identity<T>) {
      Model<T> model(spec, a.cfg.seed);
      const TrainResult r = train(model, train_set, &test_set, a.cfg);
      if (r.diverged) {
        err << "error: design " << token << ": " << r.message << '\n';
        return static_cast<int>(kExitRuntime);
      }
      const EpochMetrics* tr = nullptr;
      const EpochMetrics* te = nullptr;
      for (const auto& row : r.log) (row.split == "train" ? tr : te) = &row;
      csv << token << ',' << (spec.block ? describe(*spec.block) : "baseline") << ',' << params
          << ',' << flops << ',' << tr->loss << ',' << te->loss << ',' << te->top1 << ','
          << te->top5 << '\n';
      out << "design " << token << ": top1=" << te->top1 << " train_loss=" << tr->loss << '\n';
      return static_cast<int>(kExitOk);
    });
    if (rc != kExitOk) return rc;
  }
  Outputs files(a.out_dir);
  files.text("ablation.csv", csv.str());
  for (const auto& p : files.commit()) out << "wrote " << p.string() << '\n';
  return kExitOk;
}

struct TimeArgs {
  ModelOpts m;
  std::string variants = "baseline,ab,se", precision = "float32", out_dir;
  std::size_t batch = 32, repeats = 10;
  std::uint64_t seed = 1;
  bool require_order = false;
};

int cmd_time(const TimeArgs& a, std::ostream& out, std::ostream& err) {
  if (a.repeats < 3) throw ValidationError("--repeats must be >= 3");
  if (a.batch == 0) throw ValidationError("--batch must be positive");
  const auto tokens = split_list(a.variants);
  if (tokens.empty()) throw ValidationError("--variants needs a comma-separated list");
  const std::size_t classes = a.m.resolve_classes(0);
  std::vector<std::pair<std::string, ModelSpec>> specs;
  for (const auto& t : tokens) specs.emplace_back(t, build(a.m.model, a.m.block_spec(t), classes));

  std::vector<TimingResult> rows;
  for (const auto& [token, spec] : specs) {
    with_precision(a.precision, [&]<typename T>(std::type_identity<T>) {
      Model<T> model(spec, a.seed);
      rows.push_back(time_inference(model, token, a.batch, a.repeats, 5, a.seed));
      return 0;
    });
  }
  const std::string csv = timing_csv(rows);
  out << csv;

  auto median_of = [&](BlockKind k, bool baseline) -> std::optional<double> {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& b = specs[i].second.block;
      if (baseline ? !b : (b && b->kind == k)) return rows[i].median_s;
    }
    return std::nullopt;
  };
  const auto base = median_of(BlockKind::AB, true);
  const auto ab = median_of(BlockKind::AB, false);
  const auto se = median_of(BlockKind::SE, false);
  bool ordered = true;
  if (base && ab && se) {
    ordered = *base <= *ab && *ab <= *se;
    out << "ordering baseline <= AB <= SE (median): " << (ordered ? "holds" : "violated") << '\n';
  }
  if (!a.out_dir.empty()) {
    Outputs files(a.out_dir);
    files.text("timing.csv", csv);
    for (const auto& p : files.commit()) out << "wrote " << p.string() << '\n';
  }
  if (!ordered && a.require_order) {
    err << "error: timing ordering violated\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Channel recalibration blocks: complexity counts, training and ablations.",
               "recalib"};
  app.footer(help_footer());
  app.set_config("--config", "", "TOML config file; flags on the command line win");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);
  app.fallthrough();

  CountArgs count;
  auto* c_count = app.add_subcommand("count", "Parameters, FLOPS and run-time memory");
  count.m.add(c_count);
  c_count->add_option("--batch", count.batch, "Batch size B")->capture_default_str();
  c_count->add_option("--bytes", count.bytes, "Bytes per element")->capture_default_str();
  c_count->add_option("--flop-convention", count.flop_convention, "mac (MAC = 1 FLOP) or 2mac")
      ->check(CLI::IsMember({"mac", "2mac"}))
      ->capture_default_str();
  c_count->add_option("--layers", count.layers, "Per-layer rows to print (0: totals only)");
  c_count->add_option("--channels", count.channels, "Count a single block at this width instead");
  c_count->add_option("--out-dir", count.out_dir, "Also write CSV files here");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr.m.add(c_train);
  tr.d.add(c_train);
  add_train_opts(c_train, tr.cfg);
  c_train->add_option("--out-dir", tr.out_dir)->capture_default_str();
  c_train->add_option("--checkpoint-name", tr.checkpoint_name)->capture_default_str();
  c_train->add_option("--resume", tr.resume, "Continue from a checkpoint");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev.d.add(c_eval);
  c_eval->add_option("--checkpoint", ev.checkpoint)->required();
  c_eval->add_option("--split", ev.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  c_eval->add_option("--batch", ev.batch)->capture_default_str();
  c_eval->add_option("--out-dir", ev.out_dir, "Also write eval.csv here");

  TraceArgs tc;
  auto* c_trace = app.add_subcommand("trace", "Average recalibration weights and histogram");
  tc.d.add(c_trace);
  c_trace->add_option("--checkpoint", tc.checkpoint)->required();
  c_trace->add_option("--split", tc.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  c_trace->add_option("--bins", tc.bins)->capture_default_str();
  c_trace->add_option("--block-id", tc.block_id)->capture_default_str();
  c_trace->add_option("--batch", tc.batch)->capture_default_str();
  c_trace->add_option("--out-dir", tc.out_dir)->capture_default_str();

  ZeroArgs z;
  auto* c_zero = app.add_subcommand("zero", "Zero out the highest or lowest x% of channel weights");
  z.d.add(c_zero);
  c_zero->add_option("--checkpoint", z.checkpoint)->required();
  c_zero->add_option("--split", z.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  c_zero->add_option("--x", z.xs, "Percentages of channels per block")->delimiter(',');
  c_zero->add_option("--direction", z.direction)
      ->check(CLI::IsMember({"high", "low", "both"}))
      ->capture_default_str();
  c_zero->add_flag("--per-sample", z.per_sample, "Rank each sample's own weights");
  c_zero->add_option("--batch", z.batch)->capture_default_str();
  c_zero->add_option("--out-dir", z.out_dir, "Also write zero_out.csv here");

  AblateArgs ab;
  auto* c_ablate = app.add_subcommand("ablate", "Train several designs and tabulate metrics");
  ab.m.add(c_ablate);
  ab.d.add(c_ablate);
  add_train_opts(c_ablate, ab.cfg);
  c_ablate->add_option("--designs", ab.designs, "Comma-separated designs, e.g. e,f,g,ab,ab_plus")
      ->required();
  c_ablate->add_option("--out-dir", ab.out_dir)->capture_default_str();

  TimeArgs tm;
  auto* c_time = app.add_subcommand("time", "Inference wall-clock time per batch");
  tm.m.add(c_time);
  c_time->add_option("--variants", tm.variants)->capture_default_str();
  c_time->add_option("--batch", tm.batch)->capture_default_str();
  c_time->add_option("--repeats", tm.repeats)->capture_default_str();
  c_time->add_option("--precision", tm.precision)
      ->check(CLI::IsMember({"float32", "float64"}))
      ->capture_default_str();
  c_time->add_option("--seed", tm.seed)->capture_default_str();
  c_time->add_flag("--require-order", tm.require_order,
                   "Fail when the median ordering baseline <= AB <= SE does not hold");
  c_time->add_option("--out-dir", tm.out_dir, "Also write timing.csv here");

  for (auto* sub : app.get_subcommands({})) sub->footer(help_footer());

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }

  try {
    if (c_count->parsed()) return cmd_count(count, out);
    if (c_train->parsed()) return cmd_train(tr, out, err);
    if (c_eval->parsed()) return cmd_eval(ev, out);
    if (c_trace->parsed()) return cmd_trace(tc, out);
    if (c_zero->parsed()) return cmd_zero(z, out);
    if (c_ablate->parsed()) return cmd_ablate(ab, out, err);
    if (c_time->parsed()) return cmd_time(tm, out, err);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace recalib
