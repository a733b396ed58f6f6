#include "support.hpp"

#include "syncvsr/analysis.hpp"
#include "syncvsr/checkpoint.hpp"
#include "syncvsr/train.hpp"

#include <doctest.h>

#include <fstream>

using namespace syncvsr;
using namespace syncvsr::testing;

namespace {

EncoderConfig small_model() {
  EncoderConfig m;
  m.d_model = 16;
  m.n_layers = 1;
  m.n_heads = 2;
  m.ff_dim = 32;
  m.dropout = 0.1;
  m.decoder_layers = 1;
  m.max_frames = 128;
  return m;
}

struct Fixture {
  World world;
  Dataset train_set;
  Dataset eval_set;
};

Fixture make_fixture(TaskMode mode, const std::string& name, int num_words = 12, int train_size = 48) {
  WorldConfig wc = small_world_config();
  wc.num_words = num_words;
  Fixture f{build_world(wc, 1), {}, {}};
  DatasetConfig d;
  d.mode = mode;
  d.train_size = train_size;
  d.eval_size = 24;
  d.min_eval_per_homophene = 2;
  d.context_words = 0;
  d.max_sentence_words = 3;
  const auto dir = scratch_dir(name);
  generate_dataset(f.world, d, 2, dir);
  f.train_set = load_dataset(dir / "train");
  f.eval_set = load_dataset(dir / "eval");
  return f;
}

TrainConfig quick_config(TaskMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 3;
  c.warmup_epochs = 1;
  c.batch_size = 8;
  c.peak_lr = 3e-3;
  c.eval_every = 2;
  return c;
}

}  // namespace

TEST_CASE("lr_schedule endpoints and shape") {
  CHECK(lr_schedule(0, 10, 100, 1e-3) == 0.0);
  CHECK(lr_schedule(10, 10, 100, 1e-3) == 1e-3);
  CHECK(lr_schedule(100, 10, 100, 1e-3) == 0.0);
  CHECK(lr_schedule(5, 10, 100, 1e-3) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(lr_schedule(55, 10, 100, 1e-3) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(lr_schedule(0, 0, 10, 2.0) == 2.0);
  CHECK_THROWS_AS(lr_schedule(101, 10, 100, 1e-3), Error);
  CHECK_THROWS_AS(lr_schedule(0, 100, 100, 1e-3), Error);

  // Peak attained exactly once; adjacent steps differ by at most one slope.
  int peaks = 0;
  double prev = 0.0;
  for (long s = 0; s <= 100; ++s) {
    const double v = lr_schedule(s, 10, 100, 1e-3);
    peaks += v == 1e-3;
    CHECK(std::abs(v - prev) <= 1e-4 + 1e-15);
    prev = v;
  }
  CHECK(peaks == 1);
}

TEST_CASE("TrainConfig validation") {
  TrainConfig c;
  c.alpha = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.sync_variant = SyncVariant::Masked;
  c.mask_ratio = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c.sync_variant = SyncVariant::Off;
  CHECK_NOTHROW(c.validate());
  const TrainConfig d = train_config_from_json(to_json(TrainConfig{}));
  CHECK(to_json(d) == to_json(TrainConfig{}));
}

TEST_CASE("draw_frame_mask picks round(ratio*T) frames") {
  for (int T = 1; T < 30; ++T) {
    const auto m = draw_frame_mask(T, 0.3, static_cast<std::uint64_t>(T));
    const long n = std::count(m.begin(), m.end(), true);
    CHECK(n == std::clamp<long>(std::lround(0.3 * T), 1, T));
    CHECK(m == draw_frame_mask(T, 0.3, static_cast<std::uint64_t>(T)));
  }
}

TEST_CASE("training is deterministic and the logged totals add up") {
  const Fixture f = make_fixture(TaskMode::Word, "train_det");
  const TrainConfig c = quick_config(TaskMode::Word);
  const auto out1 = scratch_dir("train_det_out1");
  const auto out2 = scratch_dir("train_det_out2");
  const TrainOutputs o1{out1, out1 / "metrics.jsonl"}, o2{out2, out2 / "metrics.jsonl"};
  const auto a = train(c, small_model(), f.world, f.train_set, &f.eval_set, &o1);
  const auto b = train(c, small_model(), f.world, f.train_set, &f.eval_set, &o2);
  CHECK(a.parameter_hash == b.parameter_hash);
  CHECK(read_file(o1.log_path) == read_file(o2.log_path));
  CHECK(read_file(a.final_checkpoint) == read_file(b.final_checkpoint));
  CHECK(std::filesystem::exists(out1 / "epoch-002.ckpt"));
  CHECK(std::filesystem::exists(out1 / "epoch-003.ckpt"));
  CHECK(!std::filesystem::exists(out1 / "epoch-001.ckpt"));

  REQUIRE(a.log.size() == 3);
  for (const auto& e : a.log) {
    CHECK(e.l_total == e.l_task + c.lambda * e.l_sync);
    CHECK(e.l_sync > 0.0);
  }
  CHECK(!a.log[0].eval_metric.has_value());
  CHECK(a.log[1].eval_metric.has_value());

  std::ifstream in(o1.log_path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["l_total"].get<double>() == j["l_task"].get<double>() + c.lambda * j["l_sync"].get<double>());
    ++lines;
  }
  CHECK(lines == 3);

  const Checkpoint ck = load_checkpoint(a.final_checkpoint);
  CHECK(parameter_hash(ck.model.params) != "");
  CHECK(ck.meta.eval_split_id == f.eval_set.manifest_hash);

  TrainConfig other = c;
  other.seed = 1;
  CHECK(train(other, small_model(), f.world, f.train_set, nullptr).parameter_hash != a.parameter_hash);
}

TEST_CASE("sync off is the same run as lambda zero") {
  const Fixture f = make_fixture(TaskMode::Word, "train_off");
  TrainConfig off = quick_config(TaskMode::Word);
  off.sync_variant = SyncVariant::Off;
  off.lambda = 7.0;
  TrainConfig zero = quick_config(TaskMode::Word);
  zero.lambda = 0.0;
  const auto a = train(off, small_model(), f.world, f.train_set, nullptr);
  const auto b = train(zero, small_model(), f.world, f.train_set, nullptr);
  CHECK(a.parameter_hash == b.parameter_hash);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].l_sync == 0.0);
    CHECK(a.log[i].l_total == a.log[i].l_task);
    CHECK(a.log[i].l_task == b.log[i].l_task);
  }
}

TEST_CASE("word mode overfits a tiny world") {
  const Fixture f = make_fixture(TaskMode::Word, "train_overfit", 8, 64);
  TrainConfig c = quick_config(TaskMode::Word);
  c.epochs = 30;
  c.warmup_epochs = 2;
  c.sync_variant = SyncVariant::Off;
  EncoderConfig m = small_model();
  m.dropout = 0.0;
  const auto r = train(c, m, f.world, f.train_set, nullptr);
  const auto report = evaluate(r.model, f.train_set, &f.world);
  MESSAGE("train top-1 " << report.top1);
  CHECK(report.top1 > 0.9);
}

TEST_CASE("evaluate: metrics, determinism, errors") {
  const Fixture f = make_fixture(TaskMode::Sentence, "train_eval_sent");
  TrainConfig c = quick_config(TaskMode::Sentence);
  c.epochs = 2;
  const auto r = train(c, small_model(), f.world, f.eval_set, nullptr);
  const auto a = evaluate(r.model, f.eval_set, &f.world);
  const auto b = evaluate(r.model, f.eval_set, &f.world);
  CHECK(to_json(a) == to_json(b));
  CHECK(a.perplexity == doctest::Approx(std::exp(a.mean_lm_nll)).epsilon(1e-12));
  CHECK(a.wer >= 0.0);
  CHECK(a.transcripts.size() == f.eval_set.samples.size());

  // Teacher-forced mean NLL recomputed by hand.
  double nll = 0.0;
  for (const auto& s : f.eval_set.samples) {
    Forward fw(r.model, nullptr, RunMode::Eval);
    const auto enc = encode(fw, model_input(s, r.model.config), false);
    std::vector<int> prefix{r.model.config.bos()}, target;
    for (auto g : s.label) {
      prefix.push_back(g);
      target.push_back(g);
    }
    target.push_back(r.model.config.eos());
    nll += lm_loss(fw.graph().value(decode_lm(fw, enc.hidden, prefix)), target).value;
  }
  CHECK(a.mean_lm_nll == doctest::Approx(nll / static_cast<double>(f.eval_set.samples.size())).epsilon(1e-12));

  Dataset empty = f.eval_set;
  empty.samples.clear();
  CHECK_THROWS_AS(evaluate(r.model, empty, &f.world), Error);
  const World other = build_world(small_world_config(), 99);
  CHECK_THROWS_AS(evaluate(r.model, f.eval_set, &other), Error);
  CHECK_THROWS_AS(train(quick_config(TaskMode::Word), small_model(), f.world, f.train_set, nullptr), Error);
}

TEST_CASE("evaluate: perfect word predictions score 1") {
  const Fixture f = make_fixture(TaskMode::Word, "train_eval_word");
  const auto r = train(quick_config(TaskMode::Word), small_model(), f.world, f.train_set, nullptr);
  const auto rep = evaluate(r.model, f.eval_set, &f.world);
  CHECK(rep.predictions.size() == f.eval_set.samples.size());
  int correct = 0;
  for (std::size_t i = 0; i < rep.predictions.size(); ++i) correct += rep.predictions[i] == rep.labels[i];
  CHECK(rep.top1 == doctest::Approx(static_cast<double>(correct) / rep.predictions.size()).epsilon(1e-15));
  CHECK(f1_score(rep.labels, rep.labels, rep.labels[0]) == 1.0);
  CHECK(wer(std::vector<std::string>{"a", "b"}, std::vector<std::string>{"a", "b"}) == 0.0);
}

TEST_CASE("ablation grid layout") {
  const Fixture f = make_fixture(TaskMode::Sentence, "train_ablation");
  TrainConfig c = quick_config(TaskMode::Sentence);
  c.epochs = 2;
  c.alpha = 0.3;
  const auto rows = run_ablation_grid(c, small_model(), f.world, f.train_set, f.eval_set);
  REQUIRE(rows.size() == 4);
  const bool flags[4][2] = {{false, false}, {false, true}, {true, false}, {true, true}};
  for (int i = 0; i < 4; ++i) {
    CHECK(rows[i].sync == flags[i][0]);
    CHECK(rows[i].ctc == flags[i][1]);
    CHECK(rows[i].alpha == (flags[i][1] ? 0.3 : 0.0));
    CHECK(rows[i].lambda == (flags[i][0] ? 1.0 : 0.0));
    CHECK(std::isfinite(rows[i].perplexity));
  }
  CHECK(ablation_csv(rows).rfind("sync,ctc,alpha,lambda,wer,perplexity\n", 0) == 0);
  CHECK_THROWS_AS(run_ablation_grid(quick_config(TaskMode::Word), small_model(), f.world, f.train_set, f.eval_set),
                  Error);
}
