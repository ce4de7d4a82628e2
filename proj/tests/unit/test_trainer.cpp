#include <doctest.h>

#include <algorithm>
#include <string>

#include "ncca/error.hpp"
#include "ncca/trainer.hpp"
#include "test_util.hpp"

using namespace ncca;

namespace {

TrainConfig small_config(int steps) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = 128;
  cfg.d_z = 3;
  cfg.hidden_widths = {16, 16};
  cfg.eval_every = 10;
  cfg.eval_samples = 500;
  cfg.seed = 5;
  return cfg;
}

LatentSpec small_spec() { return make_latent_spec(Family::Gaussian, 3, {0.9, 0.875, 0.85}); }

ViewMaps maps_for(int d_s, int d_x) {
  return {make_decoder(d_s, d_x, 3, 11, 4.0), make_decoder(d_s, d_x, 3, 12, 4.0)};
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("one Adam step matches a hand computation") {
  EncoderParams enc = init_encoder(2, 1, {}, 0);
  const Matrix w0 = enc.out_weight;
  AdamState st = init_adam(enc);
  EncoderGrads g;
  Matrix gw(2, 1);
  gw << 0.5, -2.0;
  g.tensors = {gw, Matrix::Zero(1, 1)};
  AdamConfig cfg;
  adam_step(enc, st, g, cfg);
  // After one step m_hat = g and v_hat = g^2, so each entry moves lr * g / (|g| + eps).
  CHECK(enc.out_weight(0) == doctest::Approx(w0(0) + 1e-4 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(enc.out_weight(1) == doctest::Approx(w0(1) - 1e-4 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
  CHECK(enc.out_bias(0) == 0.0);
  CHECK(st.step == 1);
  CHECK(st.m[0](1) == doctest::Approx(0.1 * -2.0));
  CHECK(st.v[0](1) == doctest::Approx(0.001 * 4.0));
  CHECK(enc.version == 1);
}

TEST_CASE("Adam moments stay congruent with the parameters") {
  const EncoderParams enc = init_encoder(6, 3, {8, 4}, 0);
  const AdamState st = init_adam(enc);
  const auto params = enc.parameters();
  REQUIRE(st.m.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(st.m[i].rows() == params[i]->rows());
    CHECK(st.v[i].cols() == params[i]->cols());
  }
}

TEST_CASE("epsilon policies") {
  EpsilonPolicy fixed;
  CHECK(fixed.at(1000) == 1e-3);
  EpsilonPolicy sched;
  sched.kind = EpsilonPolicy::Kind::SampleSize;
  CHECK(sched.at(10000) == doctest::Approx(0.001));
  CHECK(sched.at(1000) == doctest::Approx(0.01 * std::pow(1000.0, -0.25)));
  CHECK(sched.at(100000) < sched.at(10000));
}

TEST_CASE("zero steps leaves the initialization untouched") {
  TrainConfig cfg = small_config(0);
  const TrainResult r = train_cca(cfg, small_spec(), maps_for(3, 12));
  CHECK(r.history.rows.empty());
  CHECK(r.history.j_trace.empty());
  CcaTrainer fresh(cfg, small_spec(), maps_for(3, 12));
  CHECK(r.f.out_weight == fresh.f().out_weight);
  CHECK(r.f_prime.hidden[0].weight == fresh.f_prime().hidden[0].weight);
}

TEST_CASE("training is deterministic per seed") {
  const TrainConfig cfg = small_config(30);
  const TrainResult a = train_cca(cfg, small_spec(), maps_for(3, 12));
  const TrainResult b = train_cca(cfg, small_spec(), maps_for(3, 12));
  CHECK(a.history.j_trace == b.history.j_trace);
  REQUIRE(a.history.rows.size() == b.history.rows.size());
  for (std::size_t i = 0; i < a.history.rows.size(); ++i) {
    CHECK(a.history.rows[i].r2_f == b.history.rows[i].r2_f);
    CHECK(a.history.rows[i].sigmas == b.history.rows[i].sigmas);
  }
  CHECK(a.f.out_weight == b.f.out_weight);

  TrainConfig other = cfg;
  other.seed = 6;
  CHECK(train_cca(other, small_spec(), maps_for(3, 12)).history.j_trace != a.history.j_trace);
}

TEST_CASE("fixed-dataset sampling is deterministic and uses the sample-size ridge") {
  TrainConfig cfg = small_config(20);
  cfg.sampling = Sampling::FixedDataset;
  cfg.dataset_size = 300;
  cfg.epsilon.kind = EpsilonPolicy::Kind::SampleSize;
  CcaTrainer a(cfg, small_spec(), maps_for(3, 12));
  CHECK(a.epsilon() == doctest::Approx(0.01 * std::pow(300.0, -0.25)));
  a.run();
  CcaTrainer b(cfg, small_spec(), maps_for(3, 12));
  b.run();
  CHECK(a.history().j_trace == b.history().j_trace);
}

TEST_CASE("objective never exceeds d_Z") {
  const TrainConfig cfg = small_config(100);
  const TrainResult r = train_cca(cfg, small_spec(), maps_for(3, 12));
  for (double j : r.history.j_trace) CHECK(j <= cfg.d_z + 1e-6);
  for (const HistoryRow& row : r.history.rows) CHECK(row.sigmas.maxCoeff() <= 1.0 + 1e-6);
}

TEST_CASE("history rows land on the evaluation cadence") {
  const TrainResult r = train_cca(small_config(30), small_spec(), maps_for(3, 12));
  REQUIRE(r.history.rows.size() == 3);
  CHECK(r.history.rows[0].step == 10);
  CHECK(r.history.rows[2].step == 30);
  CHECK(r.history.j_trace.size() == 30);
}

TEST_CASE("invalid trainer configurations") {
  auto code = [](TrainConfig cfg) {
    try {
      CcaTrainer t(cfg, small_spec(), maps_for(3, 12));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  TrainConfig cfg = small_config(1);
  cfg.batch_size = 1;
  CHECK(code(cfg) == ErrorCode::InsufficientBatch);
  cfg = small_config(1);
  cfg.adam.lr = 0.0;
  CHECK(code(cfg) == ErrorCode::ConfigError);
  cfg = small_config(1);
  cfg.sampling = Sampling::FixedDataset;
  cfg.dataset_size = 1;
  CHECK(code(cfg) == ErrorCode::ConfigError);
}

TEST_CASE("an absurd learning rate is reported as divergence") {
  TrainConfig cfg = small_config(50);
  cfg.adam.lr = 1e308;
  try {
    train_cca(cfg, small_spec(), maps_for(3, 12));
    FAIL("expected DivergedTraining");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DivergedTraining);
  }
}

TEST_CASE("train config json round-trip") {
  TrainConfig cfg = small_config(77);
  cfg.sampling = Sampling::FixedDataset;
  cfg.dataset_size = 1234;
  cfg.epsilon.kind = EpsilonPolicy::Kind::SampleSize;
  const TrainConfig back = train_config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
  CHECK(to_json(back) == to_json(cfg));
  CHECK(back.hidden_widths == cfg.hidden_widths);
  CHECK(back.dataset_size == 1234);
}

TEST_CASE("checkpoints carry encoders, optimizer state and the config hash") {
  CcaTrainer t(small_config(5), small_spec(), maps_for(3, 12));
  t.run();
  const nlohmann::json ck = nlohmann::json::parse(checkpoint_json(t, "abc123").dump());
  CHECK(ck.at("config_hash") == "abc123");
  CHECK(ck.at("step") == 5);
  CHECK(ck.at("adam_f").at("step") == 5);
  const EncoderParams f = encoder_from_json(ck.at("encoder_f"));
  const Matrix x = testutil::gaussian(8, 12, 1);
  CHECK(forward_eval(f, x) == forward_eval(t.f(), x));
}

TEST_CASE("windowed median objective rises over early training" * doctest::timeout(900)) {
  const LatentSpec spec = make_latent_spec(Family::Gaussian, 5, equally_spaced_rho(5, 0.85, 0.90));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    TrainConfig cfg;
    cfg.steps = 5000;
    cfg.d_z = 5;
    cfg.seed = seed;
    cfg.eval_every = 0;
    const TrainResult r = train_cca(cfg, spec, maps_for(5, 20));
    const auto& j = r.history.j_trace;
    double prev = -1.0, prev_se = 0.0;
    int drops = 0;
    std::string trace;
    for (std::size_t w = 0; w + 200 <= j.size(); w += 200) {
      const std::vector<double> win(j.begin() + static_cast<std::ptrdiff_t>(w),
                                    j.begin() + static_cast<std::ptrdiff_t>(w + 200));
      const double m = median(win);
      double mu = 0.0, var = 0.0;
      for (double x : win) mu += x / 200.0;
      for (double x : win) var += (x - mu) * (x - mu) / 199.0;
      // Standard error of a sample median under near-Gaussian batch noise.
      const double se = 1.2533 * std::sqrt(var / 200.0);
      trace += std::to_string(m) + " ";
      // Consecutive windows may only dip within batch noise (4 combined se).
      if (prev > 0.0 && m < prev - 4.0 * std::hypot(se, prev_se)) ++drops;
      prev = m;
      prev_se = se;
    }
    CAPTURE(trace);
    CHECK(drops == 0);
  }
}
