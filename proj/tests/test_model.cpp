#include "knowfuse/errors.hpp"
#include "knowfuse/model.hpp"
#include "knowfuse/trainer.hpp"

#include "support.hpp"
#include "toy.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace knowfuse;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("knowfuse_test_model_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

TrainOptions short_run(int steps, int warmup) {
  TrainOptions t = TrainOptions::desk_defaults();
  t.steps = steps;
  t.embedding_warmup_steps = warmup;
  t.batch_size = 4;
  return t;
}

}  // namespace

TEST_CASE("gradient check over the full objective, every parameter tensor") {
  testing::GradientFixture fx;
  auto loss = [&] { return fx.loss().total; };
  const auto first = fx.loss();
  CHECK(first.mnem_terms > 0);
  CHECK(first.mmem_mentions > 0);
  CHECK(first.mlm_positions > 0);
  // The token table is large; its gradient is exercised by the encoder tests.
  const auto reports = testing::gradient_check(fx.model->params(), loss,
                                               [](const std::string& n) { return n != "encoder.embed.token"; });
  CHECK(reports.size() + 1 == fx.model->params().items().size());
  int infusion = 0, readout = 0, kg = 0;
  for (const auto& r : reports) {
    INFO(r.name);
    CHECK(r.rel_error < 1e-4);
    infusion += r.name.starts_with("infusion.");
    readout += r.name.starts_with("readout.");
    kg += r.name.starts_with("kg.");
  }
  CHECK(infusion == 27);
  CHECK(readout > 0);
  CHECK(kg > 0);
}

TEST_CASE("zero lambdas leave the conventional loss alone") {
  testing::GradientFixture fx;
  LossSettings ls;
  ls.target_cache = &fx.target_cache;
  const auto l = fx.model->compute_loss(fx.batch, fx.toy.world.kg, &*fx.sampler, ls, ForwardContext{});
  CHECK(l.total.item() == l.lex.item());
  CHECK(l.lex.item() == l.mlm.item() + l.sop.item());
  const auto full = fx.loss();
  CHECK(full.total.item() ==
        doctest::Approx(full.lex.item() + 2.0 * full.mnem.item() + 4.0 * full.mmem.item()).epsilon(1e-14));
  CHECK(fx.toy.cfg.lambda1 == 2.0);
  CHECK(fx.toy.cfg.lambda2 == 4.0);
}

TEST_CASE("infusion changes only what it should") {
  testing::GradientFixture fx;
  const auto& ex = fx.batch.examples[0];
  std::vector<MentionSpan> spans;
  for (const auto& m : ex.mentions) spans.push_back(m.span);
  const auto on = fx.model->encode(ex.ids, ex.segments, spans, &fx.toy.world.kg, ForwardContext{}, true);
  const auto off = fx.model->encode(ex.ids, ex.segments, spans, &fx.toy.world.kg, ForwardContext{}, false);
  // Layers before the injection point are untouched.
  CHECK(on.layers[0].value() == off.layers[0].value());
  CHECK(on.layers[1].value() != off.layers[1].value());
  const auto none = fx.model->encode(ex.ids, ex.segments, {}, &fx.toy.world.kg, ForwardContext{}, true);
  CHECK(none.final().value() == off.final().value());
}

TEST_CASE("checkpoint round trip restores float-rounded parameters") {
  testing::GradientFixture fx;
  fx.model->freeze_target_embeddings();
  const auto dir = scratch("ckpt");
  fx.model->save(dir);
  const KnowledgeModel back = KnowledgeModel::load(dir, &fx.toy.emb);
  CHECK(back.config().d1 == 16);
  CHECK(back.config().train_kg_embeddings);
  REQUIRE(back.params().items().size() == fx.model->params().items().size());
  for (const auto& [name, p] : fx.model->params().items()) {
    INFO(name);
    const Matrix rounded = p.value().cast<float>().cast<double>();
    CHECK(back.params().get(name).value() == rounded);
  }
  CHECK(*back.target_embeddings() == fx.model->target_embeddings()->cast<float>().cast<double>());
  // Saving the reloaded model reproduces the same bytes.
  const auto again = scratch("ckpt2");
  back.save(again);
  std::ifstream a(dir / "params.f32", std::ios::binary), b(again / "params.f32", std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
  std::filesystem::remove(dir / "params.f32");
  CHECK_THROWS_AS(KnowledgeModel::load(dir, &fx.toy.emb), InputError);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(again);
}

TEST_CASE("Adam matches the textbook update on one scalar") {
  ParameterSet ps;
  Tensor w = ps.add("w", Matrix{{1.0}});
  TrainOptions t;
  t.learning_rate = 0.1;
  t.grad_clip = 0.0;
  Adam adam(t);
  double m = 0.0, v = 0.0, x = 1.0;
  for (int step = 1; step <= 5; ++step) {
    ag::scale(ag::squared_norm(w), 1.5).backward();  // d/dw = 3 w
    const double g = 3.0 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.1 * (m / (1 - std::pow(0.9, step))) / (std::sqrt(v / (1 - std::pow(0.999, step))) + 1e-8);
    adam.step(ps);
    CHECK(w.value()(0, 0) == doctest::Approx(x).epsilon(1e-14));
  }
  CHECK(adam.steps_taken() == 5);
}

TEST_CASE("Adam clips by global norm") {
  ParameterSet ps;
  Tensor a = ps.add("a", Matrix{{0.0}}), b = ps.add("b", Matrix{{0.0}});
  TrainOptions t;
  t.learning_rate = 1.0;
  t.grad_clip = 1.0;
  Adam adam(t);
  ag::add(ag::scale(a, 30.0), ag::scale(b, 40.0)).backward();
  CHECK(adam.step(ps) == doctest::Approx(50.0).epsilon(1e-15));
  // First Adam step moves each coordinate by lr regardless of scale.
  CHECK(a.value()(0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(b.value()(0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("moving average and loss log format") {
  const std::vector<double> v{4, 2, 6, 8};
  const auto ma = moving_average(v, 2);
  CHECK(ma == std::vector<double>{4, 3, 4, 7});
  CHECK(moving_average(v, 10).back() == 5.0);
  CHECK_THROWS_AS(moving_average(v, 0), InputError);
  std::ostringstream out;
  const std::vector<StepLog> log{{1, 0.5, 0.25, 0.75, 0.125, 0.0625, 1.25}};
  write_loss_log(out, log);
  CHECK(out.str() == "{\"step\":1,\"L_EX\":0.75,\"L_MNeM\":0.125,\"L_MMeM\":0.0625,\"total\":1.25}\n");
}

TEST_CASE("pretraining is deterministic and matches the recorded run") {
  auto toy = testing::desk_toy(60, 3, 10);
  KnowledgeModel a(toy.cfg, &toy.emb), b(toy.cfg, &toy.emb);
  const auto ra = pretrain(a, toy.data(), short_run(10, 5), 3);
  const auto rb = pretrain(b, toy.data(), short_run(10, 5), 3);
  REQUIRE(ra.log.size() == 10);
  CHECK(ra.warmup.size() == 5);
  CHECK(ra.log == rb.log);
  CHECK(ra.warmup == rb.warmup);
  for (const auto& s : ra.log) {
    CHECK(s.total == doctest::Approx(s.lex + 2.0 * s.mnem + 4.0 * s.mmem).epsilon(1e-12));
    CHECK(std::isfinite(s.total));
  }
  const std::vector<double> golden{115.44596659025287, 17.154058240706345, 169.81521468602395, 35.961805460704937,
                                   75.195137206956218, 83.720442496883905, 79.337149906008449, 89.768534685305241,
                                   96.652248545364387, 56.089252041853264};
  for (std::size_t i = 0; i < golden.size(); ++i) {
    CHECK(ra.log[i].total == doctest::Approx(golden[i]).epsilon(1e-9));
  }
  KnowledgeModel c(toy.cfg, &toy.emb);
  CHECK_FALSE(pretrain(c, toy.data(), short_run(10, 5), 4).log == ra.log);
}

TEST_CASE("pretraining input errors") {
  auto toy = testing::desk_toy(10, 2, 1);
  KnowledgeModel m(toy.cfg, &toy.emb);
  PretrainData missing = toy.data();
  missing.freq = nullptr;
  CHECK_THROWS_AS(pretrain(m, missing, short_run(1, 0), 1), InputError);
  PretrainData empty = toy.data();
  empty.documents = {};
  CHECK_THROWS_AS(pretrain(m, empty, short_run(1, 0), 1), InputError);
  ModelConfig wrong = toy.cfg;
  wrong.vocab_size = 400;
  KnowledgeModel small(wrong, &toy.emb);
  CHECK_THROWS_AS(pretrain(small, toy.data(), short_run(1, 0), 1), InputError);
  ModelConfig d2 = toy.cfg;
  d2.d2 = 8;
  CHECK_THROWS_AS(KnowledgeModel(d2, &toy.emb), InputError);
}
