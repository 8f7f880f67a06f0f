#pragma once

#include "knowfuse/batch.hpp"
#include "knowfuse/model.hpp"

#include <functional>
#include <ostream>
#include <span>
#include <vector>

namespace knowfuse {

class Adam {
 public:
  explicit Adam(const TrainOptions& opts);

  // Clips the global gradient norm, applies one update and clears every gradient.
  // Returns the pre-clip gradient norm.
  double step(ParameterSet& params);
  int steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_, wd_, clip_;
  int t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct StepLog {
  int step = 0;
  double mlm = 0.0;
  double sop = 0.0;
  double lex = 0.0;
  double mnem = 0.0;
  double mmem = 0.0;
  double total = 0.0;

  friend bool operator==(const StepLog&, const StepLog&) = default;
};

// Fixed inputs shared by every training step.
struct PretrainData {
  const KnowledgeGraph* kg = nullptr;
  const Vocab* vocab = nullptr;
  const FrequencyTable* freq = nullptr;
  std::span<const Document> documents;
};

struct PretrainResult {
  std::vector<StepLog> warmup;  // MLM-only steps run before the target table is frozen
  std::vector<StepLog> log;     // main objective, steps 1..opts.steps
};

// Warms the token embeddings with MLM only (when no target table is set yet), freezes them
// as the masked-mention target table, then optimizes the weighted objective.
PretrainResult pretrain(KnowledgeModel& model, const PretrainData& data, const TrainOptions& opts,
                        std::uint64_t seed, const std::function<void(const StepLog&)>& on_step = {});

// {step, L_EX, L_MNeM, L_MMeM, total} per line, full double precision.
void write_loss_log(std::ostream& out, std::span<const StepLog> log);

// Trailing moving average with the given window (shorter at the start).
std::vector<double> moving_average(std::span<const double> values, std::size_t window);

}  // namespace knowfuse
