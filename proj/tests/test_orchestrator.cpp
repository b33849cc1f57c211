#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "elab/config.hpp"
#include "elab/core/errors.hpp"
#include "elab/orch/runner.hpp"
#include "elab/safety/monitor.hpp"

using namespace elab;
using namespace elab::orch;
namespace fs = std::filesystem;

namespace {

// Small nets and short episodes keep these runs fast.
Config test_config(uint64_t seed = 11) {
  Config cfg;
  cfg.seed = seed;
  cfg.agent.hidden = {16, 16};
  cfg.agent.batch_size = 16;
  cfg.agent.replay_batches = 1;
  cfg.episode.cycles_per_episode = 30;
  cfg.episode.validation_every = 2;
  cfg.episode.dwell_min = 5;
  cfg.episode.dwell_max = 15;
  return cfg;
}

std::string temp_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("elab_orch_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

// Permissive matrices: a known limit everywhere, so training can run without
// a measurement phase.
std::string write_matrices(const Config& cfg, const std::string& dir, double r_lim = 0.6) {
  auto m = safety::LimitationMatrices::init(cfg.classifier.class_count(), cfg.directions,
                                            cfg.matrices_hash());
  for (auto& v : m.r_lim) v = r_lim;
  for (auto& z : m.z_lim) z = 5;
  const std::string path = dir + "/mats.csv";
  safety::save_matrices(m, path);
  return path;
}

std::vector<CycleRow> rows_for_episode(const std::vector<CycleRow>& rows, long episode) {
  std::vector<CycleRow> out;
  for (const auto& r : rows)
    if (r.episode == episode) out.push_back(r);
  return out;
}

}  // namespace

TEST_CASE("metrics: documented example aggregations") {
  const EngineConstants k;
  std::vector<CycleRow> rows(3);
  // Constant pmi on target.
  for (auto& r : rows) {
    r.setpoint = 3.0;
    r.out.pmi = 3.0;
    r.out.m_g = 5.0;
    r.out.alpha50 = 6.0;
  }
  rows[1].out.alpha50 = 8.0;
  rows[2].out.alpha50 = 6.0;
  const Summary s = summarize(rows, k, 0.5);
  CHECK(s.rmse_pmi == 0.0);
  CHECK(s.stability == doctest::Approx(2.828).epsilon(1e-3));

  std::vector<CycleRow> dp(2);
  dp[0].out.dpmax = 5.5;
  dp[1].out.dpmax = 4.0;
  for (auto& r : dp) {
    r.setpoint = 3.0;
    r.out.pmi = 3.0;
    r.out.m_g = 5.0;
  }
  const Summary s2 = summarize(dp, k, 0.5);
  CHECK(s2.dp_violations == 1);
  CHECK(s2.mean_overshoot == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS(summarize(std::vector<CycleRow>{}, k, 0.5));
}

TEST_CASE("grouped cumulative reward sums whole groups in order") {
  std::vector<CycleRow> rows(10);
  for (int i = 0; i < 10; ++i) rows[i].rew.total = -static_cast<double>(i);
  const auto groups = grouped_cumulative_reward(rows, 4);
  REQUIRE(groups.size() == 2);  // the trailing partial group is dropped
  CHECK(groups[0] == doctest::Approx(-6.0));   // 0+1+2+3
  CHECK(groups[1] == doctest::Approx(-22.0));  // 4+5+6+7
}

TEST_CASE("training requires limitation matrices") {
  const Config cfg = test_config();
  const std::string out = temp_dir("nomats");
  CHECK_THROWS_AS(Runner(cfg, RunMode::Train, {.out_dir = out}), SafetyPreconditionError);
  fs::remove_all(out);
}

TEST_CASE("matrices measured under a different configuration are refused") {
  Config cfg = test_config();
  const std::string out = temp_dir("hashmats");
  const std::string mats = write_matrices(cfg, out);
  Config other = cfg;
  other.bounds.u_max.alpha_nvo = 212.0;
  CHECK_THROWS_AS(Runner(other, RunMode::Train, {.out_dir = out, .matrices = mats}),
                  SafetyPreconditionError);
  fs::remove_all(out);
}

TEST_CASE("single noise-free episode: row count, checkpoint, reward-breakdown consistency") {
  Config cfg = test_config();
  cfg.agent.sigma0 = 0.0;
  cfg.episode.validation_every = 100;  // no interleaved validation
  const std::string out = temp_dir("bookkeeping");
  const std::string mats = write_matrices(cfg, out);

  Runner runner(cfg, RunMode::Train, {.out_dir = out, .matrices = mats});
  runner.set_episode_budget(1);
  runner.run();

  const auto rows = read_cycle_log(out + "/cycles.csv");
  CHECK(rows.size() == static_cast<size_t>(cfg.episode.cycles_per_episode));
  CHECK(fs::exists(out + "/checkpoint.json"));
  CHECK(fs::exists(out + "/buffer.bin"));
  CHECK(fs::exists(out + "/summary.json"));

  // Exactly one done marker, at the last cycle.
  for (size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].done == (i + 1 == rows.size() ? 1 : 0));

  // The logged total is exactly the sum of the logged components, and the
  // 17-digit round trip keeps it bit-exact.
  for (const auto& r : rows) {
    double sum = 0.0;
    for (double v : r.rew.value) sum += v;
    CHECK(r.rew.total == sum);
    CHECK(r.rew.total <= 0.0);
  }
  fs::remove_all(out);
}

TEST_CASE("resumed training reproduces the uninterrupted run bit for bit") {
  const std::string out_a = temp_dir("resume_a");
  const std::string out_b = temp_dir("resume_b");
  Config cfg = test_config(21);
  const std::string mats_a = write_matrices(cfg, out_a);
  const std::string mats_b = write_matrices(cfg, out_b);

  {
    Runner a(cfg, RunMode::Train, {.out_dir = out_a, .matrices = mats_a});
    a.set_episode_budget(4);
    a.run();
  }
  {
    Runner b1(cfg, RunMode::Train, {.out_dir = out_b, .matrices = mats_b});
    b1.set_episode_budget(2);
    b1.run();
  }
  {
    Runner b2(cfg, RunMode::Train,
              {.out_dir = out_b, .matrices = mats_b,
               .checkpoint = out_b + "/checkpoint.json", .resume = true});
    b2.set_episode_budget(4);
    b2.run();
  }

  const auto rows_a = read_cycle_log(out_a + "/cycles.csv");
  const auto rows_b = read_cycle_log(out_b + "/cycles.csv");
  REQUIRE(rows_a.size() == rows_b.size());
  for (size_t i = 0; i < rows_a.size(); ++i) {
    CHECK(rows_a[i].episode == rows_b[i].episode);
    CHECK(rows_a[i].u_raw == rows_b[i].u_raw);
    CHECK(rows_a[i].out.pmi == rows_b[i].out.pmi);
    CHECK(rows_a[i].rew.total == rows_b[i].rew.total);
  }
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

TEST_CASE("a checkpoint from a different configuration is refused") {
  const std::string out = temp_dir("ckpt_hash");
  Config cfg = test_config(31);
  const std::string mats = write_matrices(cfg, out);
  {
    Runner r(cfg, RunMode::Train, {.out_dir = out, .matrices = mats});
    r.set_episode_budget(1);
    r.run();
  }
  Config other = cfg;
  other.agent.gamma = 0.8;
  const std::string out2 = temp_dir("ckpt_hash2");
  const std::string mats2 = write_matrices(other, out2);
  CHECK_THROWS_AS(Runner(other, RunMode::Train,
                         {.out_dir = out, .matrices = mats2,
                          .checkpoint = out + "/checkpoint.json", .resume = true}),
                  ConfigError);
  fs::remove_all(out2);
  fs::remove_all(out);
}

TEST_CASE("validation episodes mutate neither parameters nor the buffer") {
  Config cfg = test_config(41);
  cfg.episode.validation_every = 1;  // T,V,T,V
  const std::string out = temp_dir("val_frozen");
  const std::string mats = write_matrices(cfg, out);
  Runner r(cfg, RunMode::Train, {.out_dir = out, .matrices = mats});
  r.set_episode_budget(2);
  r.run();

  const CsvTable episodes = read_csv(out + "/episodes.csv");
  const int c_val = episodes.column("validation");
  const int c_hash = episodes.column("param_hash");
  const int c_buf = episodes.column("buffer_size");
  const int c_sigma = episodes.column("sigma");
  REQUIRE(episodes.rows.size() == 4);
  for (size_t i = 0; i < episodes.rows.size(); ++i) {
    if (episodes.rows[i][c_val] == "1") {
      REQUIRE(i > 0);
      // Hash and buffer unchanged relative to the preceding training episode.
      CHECK(episodes.rows[i][c_hash] == episodes.rows[i - 1][c_hash]);
      CHECK(episodes.rows[i][c_buf] == episodes.rows[i - 1][c_buf]);
    }
  }
  // Sigma decayed once per training episode only.
  CHECK(episodes.number(3, c_sigma) == doctest::Approx(0.5 * 0.95 * 0.95));

  // Validation rows drew no exploration noise and pushed no experiences.
  const auto rows = read_cycle_log(out + "/cycles.csv");
  long val_rows = 0;
  for (const auto& row : rows)
    if (row.mode == "validate") ++val_rows;
  CHECK(val_rows == 2 * cfg.episode.cycles_per_episode);
  fs::remove_all(out);
}

TEST_CASE("adapt mode disables the monitor, zeroes its reward term and enables the ethanol term") {
  Config cfg = test_config(51);
  cfg.episode.validation_every = 100;
  const std::string out_train = temp_dir("adapt_train");
  const std::string out_adapt = temp_dir("adapt_run");
  const std::string mats = write_matrices(cfg, out_train);
  {
    Runner t(cfg, RunMode::Train, {.out_dir = out_train, .matrices = mats});
    t.set_episode_budget(1);
    t.run();
  }
  {
    Runner a(cfg, RunMode::Adapt,
             {.out_dir = out_adapt, .checkpoint = out_train + "/checkpoint.json"});
    a.set_episode_budget(2);
    a.run();
  }
  const auto rows = read_cycle_log(out_adapt + "/cycles.csv");
  REQUIRE(!rows.empty());
  for (const auto& r : rows) {
    CHECK(r.replaced == 0);
    CHECK(r.dr_sf == 0.0);
    CHECK(r.rew.value[3] == 0.0);  // safety component zeroed
  }
  // The ethanol component is active (strictly negative somewhere).
  bool ethanol_active = false;
  for (const auto& r : rows)
    if (r.rew.value[5] < 0.0) ethanol_active = true;
  CHECK(ethanol_active);

  // Sigma starts at 0.3 in adapt mode.
  const CsvTable episodes = read_csv(out_adapt + "/episodes.csv");
  CHECK(episodes.number(0, episodes.column("sigma")) == doctest::Approx(0.3 * 0.95));

  // Adaptation without a checkpoint is rejected.
  CHECK_THROWS_AS(Runner(cfg, RunMode::Adapt, {.out_dir = out_adapt}), ConfigError);
  fs::remove_all(out_train);
  fs::remove_all(out_adapt);
}

TEST_CASE("measure mode writes matrices plus a replay-compatible cycle log") {
  Config cfg = test_config(61);
  cfg.measurement.dr_expl = 0.1;
  const std::string out = temp_dir("measure");
  Runner m(cfg, RunMode::Measure, {.out_dir = out});
  m.set_measure_budget(800);
  m.run();

  CHECK(fs::exists(out + "/mats.csv"));
  CHECK(fs::exists(out + "/mats.csv.json"));
  const auto mats = safety::load_matrices(out + "/mats.csv", cfg.matrices_hash());
  long updated = 0;
  for (int z : mats.z_lim) updated += z;
  CHECK(updated > 0);

  const auto rows = read_cycle_log(out + "/cycles.csv");
  CHECK(rows.size() == 800);
  // The log pre-fills a replay buffer.
  ddpg::ReplayBuffer buf(4096);
  const long pushed = prefill_buffer_from_log(out + "/cycles.csv", buf);
  CHECK(pushed == 799);
  CHECK(buf.size() == 799);
  // Raw actions in the log map back onto the applied actions.
  for (size_t i = 0; i < rows.size(); i += 97) {
    const ActionVector mapped = map_raw_action(rows[i].u_raw, cfg.bounds);
    CHECK(mapped.alpha_nvo == doctest::Approx(rows[i].u_applied.alpha_nvo).epsilon(1e-9));
    CHECK(mapped.t_inj_g == doctest::Approx(rows[i].u_applied.t_inj_g).epsilon(1e-9));
    CHECK(mapped.t_inj_e == doctest::Approx(rows[i].u_applied.t_inj_e).epsilon(1e-9));
  }
  fs::remove_all(out);
}

TEST_CASE("UDP split run matches the in-process run bit for bit under 32-bit quantization") {
  Config cfg = test_config(71);
  cfg.episode.validation_every = 2;  // exercise a validation hand-off too
  const std::string out_local = temp_dir("udp_local");
  const std::string out_split = temp_dir("udp_split");
  const std::string mats_l = write_matrices(cfg, out_local);
  const std::string mats_s = write_matrices(cfg, out_split);

  // In-process reference with wire quantization enabled.
  {
    Config local = cfg;
    local.episode.quantize_wire32 = true;
    Runner r(local, RunMode::Train, {.out_dir = out_local, .matrices = mats_l});
    r.set_episode_budget(3);
    r.run();
  }

  // UDP split: agent serves on a loopback port, environment drives it.
  {
    AgentServer server(cfg, RunMode::Train, "127.0.0.1:0", "", "");
    std::atomic<bool> stop{false};
    std::thread agent_thread([&] { server.run(stop); });

    UdpRunOptions udp;
    udp.enabled = true;
    udp.listen = "127.0.0.1:0";
    udp.peer = server.local_address();
    udp.deadline_ms = 2000;  // generous so scheduler noise cannot force fallbacks
    Runner r(cfg, RunMode::Train, {.out_dir = out_split, .matrices = mats_s}, udp);
    r.set_episode_budget(3);
    r.run();
    CHECK(r.fallback_count() == 0);
    stop = true;
    agent_thread.join();
  }

  const auto rows_a = read_cycle_log(out_local + "/cycles.csv");
  const auto rows_b = read_cycle_log(out_split + "/cycles.csv");
  REQUIRE(rows_a.size() == rows_b.size());
  for (size_t i = 0; i < rows_a.size(); ++i) {
    INFO("row ", i, " mode ", rows_a[i].mode, " u_raw a=", rows_a[i].u_raw[0],
         " b=", rows_b[i].u_raw[0]);
    REQUIRE(rows_a[i].u_raw == rows_b[i].u_raw);
    CHECK(rows_a[i].u_applied.alpha_nvo == rows_b[i].u_applied.alpha_nvo);
    CHECK(rows_a[i].out.pmi == rows_b[i].out.pmi);
    CHECK(rows_a[i].rew.total == rows_b[i].rew.total);
    CHECK(rows_a[i].replaced == rows_b[i].replaced);
  }
  fs::remove_all(out_local);
  fs::remove_all(out_split);
}

TEST_CASE("prefilled measurement data lands in the buffer before training") {
  Config cfg = test_config(81);
  cfg.measurement.dr_expl = 0.1;
  cfg.episode.validation_every = 100;
  const std::string out_m = temp_dir("prefill_m");
  const std::string out_t = temp_dir("prefill_t");
  {
    Runner m(cfg, RunMode::Measure, {.out_dir = out_m});
    m.set_measure_budget(300);
    m.run();
  }
  const std::string mats = write_matrices(cfg, out_t);
  Runner t(cfg, RunMode::Train,
           {.out_dir = out_t, .matrices = mats, .prefill_log = out_m + "/cycles.csv"});
  t.set_episode_budget(1);
  t.run();
  const CsvTable episodes = read_csv(out_t + "/episodes.csv");
  // Buffer = prefill (299) + one episode of yield.
  CHECK(episodes.number(0, episodes.column("buffer_size")) ==
        doctest::Approx(299 + cfg.episode.cycles_per_episode));
  fs::remove_all(out_m);
  fs::remove_all(out_t);
}
