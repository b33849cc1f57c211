#pragma once

#include <memory>
#include <string>
#include <vector>

#include "elab/core/csv.hpp"
#include "elab/core/types.hpp"
#include "elab/reward/reward.hpp"

namespace elab::orch {

// One row per combustion cycle; the same schema for measurement, training,
// validation and adaptation so any log can pre-fill the replay buffer.
struct CycleRow {
  long episode = 0;
  long cycle = 0;  // global cycle counter within the run
  std::string mode;
  double setpoint = 0.0;
  CycleState state{};
  RawAction u_raw{};
  ActionVector u_applied{};
  int replaced = 0;
  double dr_sf = 0.0;
  int fallback = 0;
  CycleOutputs out{};
  reward::RewardBreakdown rew{};
  int done = 0;
};

const std::vector<std::string>& cycle_csv_header();

class CycleLogWriter {
 public:
  explicit CycleLogWriter(const std::string& path, bool append = false)
      : writer_(std::make_unique<CsvWriter>(path, cycle_csv_header(), append)) {}

  void write(const CycleRow& r);
  void flush() { writer_->flush(); }

 private:
  std::unique_ptr<CsvWriter> writer_;
};

std::vector<CycleRow> read_cycle_log(const std::string& path);

}  // namespace elab::orch
