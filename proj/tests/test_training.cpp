#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "enformer/models/assembly.hpp"
#include "enformer/train/checkpoint.hpp"
#include "enformer/train/loss.hpp"
#include "enformer/train/optimizer.hpp"
#include "enformer/train/schedule.hpp"
#include "enformer/train/trainer.hpp"
#include "synthetic.hpp"
#include "testutil.hpp"

using namespace enformer;
using namespace testutil;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

Tensor<double> binary_tensor(const Shape& s, Rng& rng, double p = 0.5) {
  Tensor<double> t(s);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.bernoulli(p) ? 1.0 : 0.0;
  return t;
}

// straight-line reference for the combined objective on small tensors
double loss_oracle(const Tensor<double>& p, const Tensor<double>& y) {
  double inter = 0, ps = 0, ys = 0, bce = 0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    inter += p[i] * y[i];
    ps += p[i];
    ys += y[i];
    double pc = std::min(1.0 - 1e-7, std::max(1e-7, p[i]));
    bce -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  bce /= static_cast<double>(p.numel());
  double dice = 1.0 - (2.0 * inter + 1.0) / (ps + ys + 1.0);
  return 0.5 * (dice + bce);
}

}  // namespace

TEST_CASE("dice loss closed forms", "[training]") {
  // uniform 0.5 prediction on an all-ones mask of n pixels: 1 - (n+1)/(1.5n+1)
  int64_t n = 16;
  Tensor<double> p({1, 1, 4, 4});
  Tensor<double> y({1, 1, 4, 4});
  for (int64_t i = 0; i < n; ++i) {
    p[i] = 0.5;
    y[i] = 1.0;
  }
  auto l = dice_loss(Var<double>(p), Var<double>(y));
  require_close(l.value()[0], 1.0 - (n + 1.0) / (1.5 * n + 1.0), 1e-12);

  // exact match is a perfect 0, even for the all-empty pair
  Rng rng(3);
  Tensor<double> g = binary_tensor({1, 1, 4, 4}, rng);
  require_close(dice_loss(Var<double>(g), Var<double>(g)).value()[0], 0.0, 1e-12);
  Tensor<double> zero({1, 1, 4, 4});
  require_close(dice_loss(Var<double>(zero), Var<double>(zero)).value()[0], 0.0, 1e-12);

  // random pairs stay inside [0, 1)
  for (int rep = 0; rep < 50; ++rep) {
    auto pr = rand_tensor({1, 1, 4, 4}, rng, 0.0, 1.0);
    auto yr = binary_tensor({1, 1, 4, 4}, rng);
    double v = dice_loss(Var<double>(pr), Var<double>(yr)).value()[0];
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
  }

  REQUIRE_THROWS_WITH(dice_loss(Var<double>(p), Var<double>(Tensor<double>({1, 1, 2, 2}))),
                      ContainsSubstring("shapes differ"));
}

TEST_CASE("bce loss closed forms", "[training]") {
  Rng rng(5);
  Tensor<double> y = binary_tensor({1, 1, 4, 4}, rng);
  Tensor<double> half({1, 1, 4, 4});
  for (int64_t i = 0; i < half.numel(); ++i) half[i] = 0.5;
  // P = 0.5 everywhere scores ln 2 regardless of the mask
  require_close(bce_loss(Var<double>(half), Var<double>(y)).value()[0], std::log(2.0), 1e-12);

  // saturated correct predictions cost only the clamp epsilon
  double v = bce_loss(Var<double>(y), Var<double>(y)).value()[0];
  REQUIRE(v >= 0.0);
  REQUIRE(v <= 2e-7);

  REQUIRE_THROWS_WITH(bce_loss(Var<double>(half), Var<double>(Tensor<double>({2, 2}))),
                      ContainsSubstring("shapes differ"));
}

TEST_CASE("combined loss matches a per-pixel reference", "[training]") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    auto p = rand_tensor({2, 1, 4, 4}, rng, 0.0, 1.0);
    auto y = binary_tensor({2, 1, 4, 4}, rng);
    double got = combined_loss(Var<double>(p), Var<double>(y)).value()[0];
    require_close(got, loss_oracle(p, y), 1e-12);
    REQUIRE(got >= 0.0);
    REQUIRE(std::isfinite(got));
  }
}

TEST_CASE("loss gradients match finite differences", "[training]") {
  Rng rng(17);
  Tensor<double> y = binary_tensor({1, 1, 4, 4}, rng);
  Var<double> yv(y);

  auto p1 = leaf({1, 1, 4, 4}, rng, 0.05, 0.95);
  gradcheck([&] { return dice_loss(p1, yv); }, {p1});

  auto p2 = leaf({1, 1, 4, 4}, rng, 0.05, 0.95);
  gradcheck([&] { return bce_loss(p2, yv); }, {p2});

  auto p3 = leaf({1, 1, 4, 4}, rng, 0.05, 0.95);
  gradcheck([&] { return combined_loss(p3, yv); }, {p3});
}

TEST_CASE("one-cycle schedule hits its landmarks exactly", "[training]") {
  const double max_lr = 1e-4;
  const int64_t total = 100;
  // warmup start and the 30% peak are exact, not approximate
  REQUIRE(one_cycle_lr(0, total, max_lr) == max_lr / 25.0);
  REQUIRE(one_cycle_lr(30, total, max_lr) == max_lr);

  double peak = 0.0;
  int64_t peak_at = -1;
  double prev = one_cycle_lr(0, total, max_lr);
  for (int64_t s = 0; s < total; ++s) {
    double lr = one_cycle_lr(s, total, max_lr);
    REQUIRE(lr > 0.0);
    REQUIRE(std::abs(lr - prev) < max_lr);  // continuity
    if (lr > peak) {
      peak = lr;
      peak_at = s;
    }
    prev = lr;
  }
  REQUIRE(peak == max_lr);
  REQUIRE(peak_at == 30);
  REQUIRE(one_cycle_lr(total - 1, total, max_lr) < 1e-6);

  REQUIRE_THROWS_WITH(one_cycle_lr(-1, total, max_lr), ContainsSubstring("outside"));
  REQUIRE_THROWS_WITH(one_cycle_lr(total, total, max_lr), ContainsSubstring("outside"));
  REQUIRE_THROWS_WITH(one_cycle_lr(0, 0, max_lr), ContainsSubstring("positive"));

  // the peak lands exactly on max_lr for any horizon
  for (int64_t t : {3L, 10L, 1000L}) {
    double m = 0.0;
    for (int64_t s = 0; s < t; ++s) m = std::max(m, one_cycle_lr(s, t, max_lr));
    REQUIRE(m == max_lr);
  }
}

TEST_CASE("adamw first step moves weights by lr times sign of gradient", "[training]") {
  Rng rng(23);
  auto w = leaf({6}, rng, -1.0, 1.0);
  Tensor<double> before = w.value();

  AdamW<double> opt({{"w", w}}, AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
  auto loss = ops::sum_all(ops::mul(w, w));  // grad = 2w
  backward(loss);
  opt.step();
  // with zero-initialized moments the bias-corrected update is g/|g| = sign(g)
  for (int64_t i = 0; i < before.numel(); ++i) {
    double sign = before[i] > 0 ? 1.0 : (before[i] < 0 ? -1.0 : 0.0);
    require_close(w.value()[i], before[i] - 1e-3 * sign, 1e-6);
  }
}

TEST_CASE("adamw trajectory matches a straight-line reference", "[training]") {
  Rng rng(29);
  auto w = leaf({4}, rng, -1.0, 1.0);
  std::vector<double> ref(w.value().vec());
  std::vector<double> m(4, 0.0), v(4, 0.0);
  const double lr = 1e-2, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;

  AdamW<double> opt({{"w", w}}, AdamWConfig{lr, b1, b2, eps, wd});
  for (int t = 1; t <= 5; ++t) {
    w.zero_grad();
    auto loss = ops::sum_all(ops::mul(w, w));
    backward(loss);
    // reference recurrence on the same gradients
    for (int i = 0; i < 4; ++i) {
      double g = 2.0 * ref[i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      double mhat = m[i] / (1 - std::pow(b1, t));
      double vhat = v[i] / (1 - std::pow(b2, t));
      ref[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * ref[i]);
    }
    opt.step();
    for (int i = 0; i < 4; ++i) require_close(w.value()[i], ref[i], 1e-12);
  }
  REQUIRE(opt.step_count() == 5);
}

TEST_CASE("threshold dice conventions", "[training]") {
  Tensor<double> g({2, 2});
  g[0] = 1.0;
  g[1] = 1.0;
  Tensor<double> p_eq({2, 2});
  p_eq[0] = 0.9;
  p_eq[1] = 0.8;
  p_eq[2] = 0.1;
  p_eq[3] = 0.2;
  REQUIRE(dice_at_threshold(p_eq, g, 0.5) == 1.0);

  Tensor<double> p_comp({2, 2});
  p_comp[0] = 0.1;
  p_comp[1] = 0.2;
  p_comp[2] = 0.9;
  p_comp[3] = 0.8;
  REQUIRE(dice_at_threshold(p_comp, g, 0.5) == 0.0);

  // both empty is a perfect score; >= makes 0.5 a foreground pixel at t=0.5
  Tensor<double> zero({2, 2});
  REQUIRE(dice_at_threshold(zero, zero, 0.5) == 1.0);
  Tensor<double> half({2, 2});
  for (int64_t i = 0; i < 4; ++i) half[i] = 0.5;
  Tensor<double> ones({2, 2});
  for (int64_t i = 0; i < 4; ++i) ones[i] = 1.0;
  REQUIRE(dice_at_threshold(half, ones, 0.5) == 1.0);

  // hand count: prediction {1,1,0,0} vs mask {1,0,0,1} -> 2*1/(2+2)
  Tensor<double> pa({2, 2});
  pa[0] = 0.7;
  pa[1] = 0.7;
  Tensor<double> gb({2, 2});
  gb[0] = 1.0;
  gb[3] = 1.0;
  require_close(dice_at_threshold(pa, gb, 0.5), 0.5, 1e-12);
}

TEST_CASE("validation guards its inputs", "[training]") {
  Rng rng(31);
  auto model = assemble<double>("tiny-enformer-lite", rng);
  std::vector<ModelSample<double>> val;
  REQUIRE_THROWS_WITH(validate(*model, val, 0.5), ContainsSubstring("empty"));
  val.push_back(normalize_resize<double>(blob_sample(1, 48, 48), 32));
  REQUIRE_THROWS_WITH(validate(*model, val, 0.0), ContainsSubstring("strictly inside"));
  REQUIRE_THROWS_WITH(validate(*model, val, 1.0), ContainsSubstring("strictly inside"));
  double d = validate(*model, val, 0.5);
  REQUIRE(d >= 0.0);
  REQUIRE(d <= 1.0);
}

TEST_CASE("checkpoint round trip is bit identical", "[training]") {
  fs::path dir = fs::temp_directory_path() / "enformer_ckpt_test";
  fs::create_directories(dir);
  std::string path = (dir / "model.ckpt").string();

  Rng rng(41);
  auto model = assemble<double>("tiny-enformer-lite", rng);
  AdamW<double> opt(model->named_params(), AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});

  // take one real step so the optimizer carries nonzero moments
  Tensor<double> img = rand_tensor({1, 3, 32, 32}, rng, -1.0, 1.0);
  Tensor<double> msk({1, 1, 32, 32});
  for (int64_t i = 0; i < msk.numel(); ++i) msk[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
  model->zero_grad();
  auto loss = combined_loss(model->forward(Var<double>(img)), Var<double>(msk));
  backward(loss);
  opt.step();

  model->set_training(false);
  Tensor<double> ref = model->forward(Var<double>(img)).value();

  CheckpointMeta meta;
  meta.epoch = 3;
  meta.val_dice = 0.75;
  meta.config_hash = config_fingerprint("run config text");
  meta.seed = 9;
  meta.rng_state = Rng(5).serialize();
  save_checkpoint(path, *model, &opt, meta);
  auto opt_state_before = opt.state_records();
  std::vector<std::vector<double>> params_before;
  for (auto& np : model->named_params()) params_before.push_back(np.param.value().vec());

  // perturb everything, then restore
  for (auto& np : model->named_params()) {
    Var<double> p = np.param;
    for (int64_t i = 0; i < p.value().numel(); ++i) p.mutable_value()[i] += 0.1;
  }
  Tensor<double> perturbed = model->forward(Var<double>(img)).value();
  REQUIRE(perturbed.vec() != ref.vec());

  auto loaded = load_checkpoint(path, *model, &opt, meta.config_hash, false);
  Tensor<double> restored = model->forward(Var<double>(img)).value();
  REQUIRE(restored.vec() == ref.vec());
  {
    auto params_after = model->named_params();
    REQUIRE(params_after.size() == params_before.size());
    for (size_t i = 0; i < params_after.size(); ++i)
      REQUIRE(params_after[i].param.value().vec() == params_before[i]);
  }
  REQUIRE(loaded.epoch == 3);
  REQUIRE(loaded.val_dice == 0.75);
  REQUIRE(loaded.seed == 9);
  REQUIRE(loaded.rng_state == Rng(5).serialize());

  auto opt_state_after = opt.state_records();
  REQUIRE(opt_state_before.size() == opt_state_after.size());
  for (size_t i = 0; i < opt_state_before.size(); ++i) {
    REQUIRE(opt_state_before[i].name == opt_state_after[i].name);
    REQUIRE(opt_state_before[i].data == opt_state_after[i].data);
  }

  SECTION("config hash mismatch needs the explicit override") {
    REQUIRE_THROWS_WITH(load_checkpoint(path, *model, &opt, "0123456789abcdef", false),
                        ContainsSubstring("config mismatch"));
    auto m2 = load_checkpoint(path, *model, &opt, "0123456789abcdef", true);
    REQUIRE(m2.epoch == 3);
  }

  SECTION("corruption and truncation are integrity errors") {
    std::string corrupt = (dir / "corrupt.ckpt").string();
    fs::copy_file(path, corrupt, fs::copy_options::overwrite_existing);
    fs::copy_file(path + ".json", corrupt + ".json", fs::copy_options::overwrite_existing);
    {
      std::fstream f(corrupt, std::ios::in | std::ios::out | std::ios::binary);
      f.seekg(200);
      char b = 0;
      f.read(&b, 1);
      b = static_cast<char>(~b);
      f.seekp(200);
      f.write(&b, 1);
    }
    REQUIRE_THROWS_WITH(load_checkpoint(corrupt, *model, &opt),
                        ContainsSubstring("checksum mismatch"));

    std::string trunc = (dir / "trunc.ckpt").string();
    {
      std::ifstream in(path, std::ios::binary);
      std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      std::ofstream out(trunc, std::ios::binary);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    fs::copy_file(path + ".json", trunc + ".json", fs::copy_options::overwrite_existing);
    REQUIRE_THROWS_WITH(load_checkpoint(trunc, *model, &opt), ContainsSubstring("truncated"));
  }

  SECTION("missing sidecar is reported") {
    std::string lone = (dir / "lone.ckpt").string();
    fs::copy_file(path, lone, fs::copy_options::overwrite_existing);
    REQUIRE_THROWS_WITH(load_checkpoint(lone, *model, &opt), ContainsSubstring("sidecar missing"));
  }

  fs::remove_all(dir);
}

TEST_CASE("training runs are seed deterministic", "[training]") {
  auto train = blob_set(100, 6, 48, 48);
  auto val = blob_set(200, 2, 48, 48);

  auto run = [&](uint64_t seed) {
    Rng rng(seed);
    auto model = assemble<double>("tiny-enformer-lite", rng);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 3;
    cfg.seed = seed;
    cfg.image_size = 32;
    cfg.max_lr = 1e-3;
    Trainer<double> tr(*model, cfg);
    return tr.fit(train, val);
  };

  auto a = run(7);
  auto b = run(7);
  REQUIRE(a.history.size() == 3);
  for (size_t i = 0; i < a.history.size(); ++i) {
    REQUIRE(a.history[i].train_loss == b.history[i].train_loss);
    REQUIRE(a.history[i].val_dice == b.history[i].val_dice);
    REQUIRE(a.history[i].lr == b.history[i].lr);
  }
  auto c = run(8);
  REQUIRE(a.history[0].train_loss != c.history[0].train_loss);

  // best bookkeeping: stored best equals the running maximum
  double best = 0.0;
  for (const auto& r : a.history) best = std::max(best, r.val_dice);
  REQUIRE(a.best_val_dice == best);
  REQUIRE(a.best_epoch >= 1);
}

TEST_CASE("loss decreases on the smoke set for most seeds", "[training]") {
  auto train = blob_set(300, 8, 48, 48);
  auto val = blob_set(400, 1, 48, 48);
  int improved = 0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto model = assemble<double>("tiny-enformer-lite", rng);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.seed = seed;
    cfg.image_size = 32;
    cfg.max_lr = 1e-3;
    cfg.augment = false;
    Trainer<double> tr(*model, cfg);
    auto r = tr.fit(train, val);
    if (r.history.back().train_loss < r.history.front().train_loss) ++improved;
  }
  REQUIRE(improved >= 4);
}

TEST_CASE("trainer rejects empty sets and aborts on non-finite loss", "[training]") {
  auto val = blob_set(500, 1, 48, 48);
  Rng rng(51);
  auto model = assemble<double>("tiny-enformer-lite", rng);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.image_size = 32;
  Trainer<double> tr(*model, cfg);
  REQUIRE_THROWS_WITH(tr.fit({}, val), ContainsSubstring("training set is empty"));
  REQUIRE_THROWS_WITH(tr.fit(val, {}), ContainsSubstring("validation set is empty"));

  // poison one weight; the first batch must be named in the abort
  auto params = model->named_params();
  Var<double> p0 = params.front().param;
  p0.mutable_value()[0] = std::nan("");
  REQUIRE_THROWS_WITH(tr.fit(val, val),
                      ContainsSubstring("non-finite training loss at epoch 1, batch 0"));
}

TEST_CASE("trainer writes history and checkpoints", "[training]") {
  fs::path dir = fs::temp_directory_path() / "enformer_fit_out";
  fs::remove_all(dir);
  auto train = blob_set(600, 4, 48, 48);
  auto val = blob_set(700, 2, 48, 48);
  Rng rng(61);
  auto model = assemble<double>("tiny-enformer-lite", rng);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.image_size = 32;
  cfg.out_dir = dir.string();
  cfg.config_hash = config_fingerprint("smoke");
  Trainer<double> tr(*model, cfg);
  auto r = tr.fit(train, val);

  REQUIRE(fs::exists(r.best_path));
  REQUIRE(fs::exists(r.last_path));
  REQUIRE(fs::exists(r.history_path));

  std::ifstream hist(r.history_path);
  std::string line;
  std::getline(hist, line);
  REQUIRE(line == "epoch,train_loss,val_dice,lr");
  int rows = 0;
  while (std::getline(hist, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 2);

  auto best_meta = read_checkpoint_meta(r.best_path);
  REQUIRE(best_meta.val_dice == r.best_val_dice);
  REQUIRE(best_meta.epoch == r.best_epoch);
  REQUIRE(best_meta.config_hash == config_fingerprint("smoke"));

  fs::remove_all(dir);
}
