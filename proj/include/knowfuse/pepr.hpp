#pragma once

#include "knowfuse/kg.hpp"

#include <map>
#include <vector>

namespace knowfuse {

struct PeprOptions {
  double damping = 0.85;  // mass that follows graph edges each iteration
  int max_iters = 100;
  double tol = 1e-8;      // stop once the L1 change drops below this
};

struct PeprResult {
  std::vector<double> scores;
  int iterations_run = 0;
  bool converged = false;
};

// Personalized Entity PageRank over the symmetrized graph.
//
// The jump vector puts weight 1 on the mention's entity and 1/Z on every other
// entity; the start vector uses corpus frequency (t_e / T for entities seen in the
// corpus, 1 / M otherwise, uniform when M = 0). Both are rescaled to probability
// vectors before iterating V <- damping * A V + (1 - damping) P, where A is the
// column-normalized adjacency and dangling columns spread uniformly.
PeprResult pepr_scores(const KnowledgeGraph& kg, const FrequencyTable& freq, EntityId mention_entity,
                       const PeprOptions& opts = {});

using NeighborSet = std::vector<Adjacent>;

// Scores closer than this are treated as equal when ranking neighbors.
inline constexpr double kScoreTieTolerance = 1e-9;

// Distinct 1-hop neighbors of e ranked by PEPR score (desc), then corpus frequency
// (desc), then id (asc). Each entry carries the lowest connecting relation id.
// Ties are taken in groups anchored at the highest score of each group.
NeighborSet top_k_neighbors(const KnowledgeGraph& kg, const FrequencyTable& freq,
                            const PeprResult& result, EntityId e, int k);

// Memoizes top-K recall per linked entity.
class NeighborRecall {
 public:
  NeighborRecall(const KnowledgeGraph& kg, const FrequencyTable& freq, PeprOptions opts, int k);

  const NeighborSet& recall(EntityId e);
  int k() const { return k_; }

 private:
  const KnowledgeGraph* kg_;
  const FrequencyTable* freq_;
  PeprOptions opts_;
  int k_;
  std::map<EntityId, NeighborSet> cache_;
};

}  // namespace knowfuse
