#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "recalib/trainer.hpp"

using namespace recalib;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& stem) {
  std::random_device rd;
  return fs::temp_directory_path() / (stem + "_" + std::to_string(rd()) + ".ckpt");
}

TrainConfig quick(std::size_t epochs = 1) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.augment = false;
  return c;
}

template <typename T>
std::vector<Tensor<T>> snapshot(Model<T>& m) {
  std::vector<Tensor<T>> out;
  for (auto* p : m.registry().params) out.push_back(p->value());
  return out;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("config validation and schedule") {
  TrainConfig c;
  CHECK_NOTHROW(validate(c));
  c.batch_size = 1;
  CHECK_THROWS_AS(validate(c), TrainError);
  c = TrainConfig{};
  c.lr = -0.1;
  CHECK_THROWS_AS(validate(c), TrainError);
  c = TrainConfig{};
  c.precision = "float16";
  CHECK_THROWS_AS(validate(c), TrainError);
  c = TrainConfig{};
  c.milestones = {20};
  CHECK_THROWS_AS(validate(c), TrainError);

  c = TrainConfig{};
  CHECK(effective_milestones(c) == std::vector<std::size_t>{10, 15});
  CHECK(lr_at_epoch(c, 9) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(c, 10) == doctest::Approx(0.01));
  CHECK(lr_at_epoch(c, 19) == doctest::Approx(0.001));
  c.eval_every = 4;
  c.milestones = {3};
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("metrics CSV layout") {
  const std::string csv = metrics_csv({{1, "train", 0.5, 0.25, 0.75}});
  CHECK(csv.rfind("epoch,split,loss,top1,top5\n1,train,0.5,0.25,0.75\n", 0) == 0);
}

TEST_CASE("one epoch on the toy set separates the classes") {
  const auto train_set = synthetic_dataset(1000, 10, 1);
  const auto test_set = synthetic_dataset(500, 10, 2, SplitTag::Test);
  Model<float> m(build("resnet20", parse_design("ab"), 10), 1);
  TrainConfig c = quick();
  c.lr = 0.02;
  const auto r = train(m, train_set, &test_set, c);
  REQUIRE(r.log.size() == 2);
  CHECK(r.log[1].split == "test");
  CHECK(r.log[1].top1 > 0.9);
  CHECK(r.log[1].top5 >= r.log[1].top1);
}

TEST_CASE("default config lowers the toy loss every epoch") {
  const auto data = synthetic_dataset(640, 10, 1);
  Model<float> m(build("resnet20", parse_design("ab"), 10), 1);
  TrainConfig c;
  c.epochs = 5;
  const auto r = train(m, data, nullptr, c);
  REQUIRE(r.log.size() == 5);
  for (std::size_t i = 1; i < 5; ++i) CHECK(r.log[i].loss < r.log[i - 1].loss);
}

TEST_CASE("same seed gives bitwise identical training") {
  const auto data = synthetic_dataset(96, 10, 3);
  TrainConfig c = quick();
  c.augment = true;
  Model<float> a(build("resnet20", parse_design("ab"), 10), 5);
  Model<float> b(build("resnet20", parse_design("ab"), 10), 5);
  const auto ra = train(a, data, nullptr, c);
  const auto rb = train(b, data, nullptr, c);
  CHECK(ra.log[0].loss == rb.log[0].loss);
  CHECK(snapshot(a) == snapshot(b));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto data = synthetic_dataset(64, 10, 3);
  Model<float> m(build("resnet20", parse_design("ab"), 10), 5);
  const auto before = snapshot(m);
  TrainConfig c = quick();
  c.lr = 0.0;
  train(m, data, nullptr, c);
  CHECK(snapshot(m) == before);
}

TEST_CASE("untrained model sits near chance") {
  const auto data = synthetic_dataset(1000, 10, 7, SplitTag::Test);
  Model<float> m(build("resnet20", parse_design("ab"), 10), 11);
  const auto e = evaluate(m, data);
  CHECK(e.total == 1000);
  CHECK(std::abs(e.top1_error() - 0.9) <= 0.03);
  CHECK(e.top5_error() <= e.top1_error());
  DatasetSplit empty;
  CHECK_THROWS(evaluate(m, empty));
}

TEST_CASE("every block parameter gets a gradient") {
  const auto data = synthetic_dataset(8, 10, 3);
  for (const char* d : {"ab", "ab_plus", "se", "g", "j", "m", "o"}) {
    CAPTURE(d);
    Model<double> m(build("resnet20", parse_design(d), 10), 2);
    std::vector<std::size_t> idx(8);
    std::iota(idx.begin(), idx.end(), 0);
    ForwardOptions<double> fo;
    fo.training = true;
    const auto logits = m.forward(make_batch<double>(data, idx), fo);
    const auto labels = batch_labels(data, idx);
    backward(softmax_cross_entropy(logits, std::span<const std::int32_t>(labels)));
    for (auto* p : m.registry().params) {
      if (!p->in_block()) continue;
      CAPTURE(p->name());
      REQUIRE_FALSE(p->grad().empty());
      double mx = 0.0;
      for (double g : p->grad().vec()) mx = std::max(mx, std::abs(g));
      CHECK(mx > 0.0);
    }
  }
}

TEST_CASE("SGD matches the momentum recurrence and skips decay where asked") {
  Model<double> m(build("resnet20", parse_design("ab"), 10), 1);
  auto reg = m.registry();
  for (auto* p : reg.params) p->value().fill(1.0);
  Sgd<double> opt(0.9, 0.1, false, false);
  for (auto* p : reg.params) {
    const_cast<Tensor<double>&>(p->var().grad()) = Tensor<double>(p->value().shape(), 0.5);
  }
  opt.step(reg, 0.1);
  opt.step(reg, 0.1);
  for (auto* p : reg.params) {
    const double wd = opt.decays(*p) ? 0.1 : 0.0;
    const double d1 = 0.5 + wd * 1.0;
    const double w1 = 1.0 - 0.1 * d1;
    const double d2 = 0.5 + wd * w1;
    const double w2 = w1 - 0.1 * (0.9 * d1 + d2);
    CAPTURE(p->name());
    CHECK(p->value()[0] == doctest::Approx(w2).epsilon(1e-14));
    if (p->role() == ParamRole::BnGamma || p->in_block()) CHECK_FALSE(opt.decays(*p));
    if (p->role() == ParamRole::ConvWeight && !p->in_block()) CHECK(opt.decays(*p));
  }
}

TEST_CASE("checkpoint save, load and evaluate are bitwise stable") {
  const auto data = synthetic_dataset(64, 10, 3);
  const auto test = synthetic_dataset(40, 10, 4, SplitTag::Test);
  Model<float> m(build("resnet20", parse_design("ab"), 10), 5);
  const auto r = train(m, data, nullptr, quick());
  const fs::path path = temp_file("rt");
  save_checkpoint(r.checkpoint, path);
  const Checkpoint back = load_checkpoint(path);
  auto m2 = model_from_checkpoint<float>(back);
  DatasetSplit t = test;
  t.norm = normalization_from_checkpoint(back);
  const auto e1 = evaluate(m, t), e2 = evaluate(*m2, t);
  CHECK(e1.correct1 == e2.correct1);
  CHECK(e1.loss == e2.loss);
  CHECK(snapshot(m) == snapshot(*m2));
  CHECK(checkpoint_dtype(back) == "float32");
  CHECK_THROWS(model_from_checkpoint<double>(back));

  // truncation anywhere is detected
  std::vector<char> bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  for (std::size_t cut : {std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(cut));
    out.close();
    CHECK_THROWS(load_checkpoint(path));
  }
  fs::remove(path);
}

TEST_CASE("restore rejects mismatched architectures") {
  Model<float> ab(build("resnet20", parse_design("ab"), 10), 1);
  Model<float> se(build("resnet20", parse_design("se"), 10), 1);
  const auto ck = make_checkpoint<float>(ab, nullptr, 0, nullptr, TrainConfig{}, Normalization{});
  CHECK_THROWS(restore_model(ck, se));
  CHECK(spec_from_checkpoint(ck).block->kind == BlockKind::AB);
}

TEST_CASE("resuming continues the same trajectory") {
  const auto data = synthetic_dataset(96, 10, 3);
  TrainConfig c = quick(2);
  c.augment = true;
  c.milestones = {1};
  Model<float> full(build("resnet20", parse_design("ab"), 10), 5);
  const auto rf = train(full, data, nullptr, c);

  TrainConfig first = c;
  first.epochs = 1;
  first.milestones = {};
  Model<float> part(build("resnet20", parse_design("ab"), 10), 5);
  const auto r1 = train(part, data, nullptr, first);
  Model<float> resumed(build("resnet20", parse_design("ab"), 10), 99);
  const auto r2 = train(resumed, data, nullptr, c, &r1.checkpoint);
  REQUIRE(r2.log.size() == 1);
  CHECK(r2.log[0].epoch == 2);
  CHECK(r2.log[0].loss == rf.log[1].loss);
  CHECK(snapshot(resumed) == snapshot(full));
}

TEST_CASE("a non-finite loss restores the last good epoch") {
  const auto data = synthetic_dataset(64, 10, 3);
  Model<float> m(build("resnet20", parse_design("ab"), 10), 5);
  TrainHooks hooks;
  std::vector<Tensor<float>> after_first;
  hooks.on_epoch = [&](const std::vector<EpochMetrics>&) {
    if (after_first.empty()) after_first = snapshot(m);
  };
  hooks.poison = [](std::size_t epoch, std::size_t step) { return epoch == 1 && step == 1; };
  const auto r = train(m, data, nullptr, quick(3), nullptr, hooks);
  CHECK(r.diverged);
  CHECK(r.epochs_completed == 1);
  CHECK_FALSE(r.message.empty());
  CHECK(snapshot(m) == after_first);
  CHECK(r.checkpoint.meta.at("epoch") == 1);
}

TEST_CASE("precision must match the model type") {
  const auto data = synthetic_dataset(8, 10, 3);
  Model<float> m(build("resnet20", std::nullopt, 10), 1);
  TrainConfig c = quick();
  c.precision = "float64";
  CHECK_THROWS_AS(train(m, data, nullptr, c), TrainError);
}

}  // TEST_SUITE
