#include "knowfuse/pepr.hpp"

#include "knowfuse/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace knowfuse {

namespace {

void normalize(std::vector<double>& v) {
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  for (double& x : v) x /= s;
}

}  // namespace

PeprResult pepr_scores(const KnowledgeGraph& kg, const FrequencyTable& freq, EntityId mention_entity,
                       const PeprOptions& opts) {
  const std::size_t z = kg.num_entities();
  if (z == 0) throw InputError("pepr_scores: graph has no entities");
  if (!kg.valid_entity(mention_entity)) {
    throw InputError("pepr_scores: unknown entity id " + std::to_string(mention_entity));
  }
  if (!(opts.damping > 0.0 && opts.damping < 1.0)) throw InputError("pepr_scores: damping must lie in (0, 1)");
  if (freq.counts.size() != z) throw InputError("pepr_scores: frequency table does not match graph");

  const double inv_z = 1.0 / static_cast<double>(z);
  std::vector<double> jump(z, inv_z);
  jump[static_cast<std::size_t>(mention_entity)] = 1.0;
  normalize(jump);

  std::vector<double> v(z);
  for (std::size_t e = 0; e < z; ++e) {
    if (freq.sample_count == 0) {
      v[e] = inv_z;
    } else if (freq.counts[e] > 0) {
      v[e] = static_cast<double>(freq.counts[e]) / static_cast<double>(freq.total);
    } else {
      v[e] = 1.0 / static_cast<double>(freq.sample_count);
    }
  }
  normalize(v);

  PeprResult res;
  std::vector<double> next(z);
  const double walk = opts.damping;
  for (int it = 0; it < opts.max_iters; ++it) {
    double dangling = 0.0;
    for (std::size_t i = 0; i < z; ++i) next[i] = (1.0 - walk) * jump[i];
    for (std::size_t j = 0; j < z; ++j) {
      const auto& adj = kg.adjacency(static_cast<EntityId>(j));
      if (adj.empty()) {
        dangling += v[j];
        continue;
      }
      const double share = walk * v[j] / static_cast<double>(adj.size());
      for (const auto& a : adj) next[static_cast<std::size_t>(a.neighbor)] += share;
    }
    if (dangling > 0.0) {
      const double spread = walk * dangling * inv_z;
      for (double& x : next) x += spread;
    }
    double change = 0.0;
    for (std::size_t i = 0; i < z; ++i) change += std::abs(next[i] - v[i]);
    v.swap(next);
    res.iterations_run = it + 1;
    if (change < opts.tol) {
      res.converged = true;
      break;
    }
  }
  res.scores = std::move(v);
  return res;
}

NeighborSet top_k_neighbors(const KnowledgeGraph& kg, const FrequencyTable& freq,
                            const PeprResult& result, EntityId e, int k) {
  if (k < 1) throw InputError("top_k_neighbors: K must be >= 1");
  if (!kg.valid_entity(e)) throw InputError("top_k_neighbors: unknown entity id " + std::to_string(e));
  if (result.scores.size() != kg.num_entities()) {
    throw InputError("top_k_neighbors: score vector does not match graph");
  }
  // neighbor_set is ordered by (neighbor, relation, direction), so the first entry
  // per neighbor carries its lowest relation id.
  NeighborSet candidates;
  for (const auto& a : neighbor_set(kg, e)) {
    if (a.neighbor == e) continue;
    if (!candidates.empty() && candidates.back().neighbor == a.neighbor) continue;
    candidates.push_back(a);
  }
  auto score = [&](const Adjacent& a) { return result.scores[static_cast<std::size_t>(a.neighbor)]; };
  auto by_frequency = [&](const Adjacent& a, const Adjacent& b) {
    const auto fa = freq.count(a.neighbor);
    const auto fb = freq.count(b.neighbor);
    if (fa != fb) return fa > fb;
    return a.neighbor < b.neighbor;
  };
  std::sort(candidates.begin(), candidates.end(), [&](const Adjacent& a, const Adjacent& b) {
    if (score(a) != score(b)) return score(a) > score(b);
    return by_frequency(a, b);
  });
  // Scores within kScoreTieTolerance of a group's leader count as tied.
  for (std::size_t i = 0; i < candidates.size();) {
    std::size_t j = i + 1;
    while (j < candidates.size() && score(candidates[i]) - score(candidates[j]) <= kScoreTieTolerance) ++j;
    std::sort(candidates.begin() + static_cast<std::ptrdiff_t>(i), candidates.begin() + static_cast<std::ptrdiff_t>(j),
              by_frequency);
    i = j;
  }
  if (candidates.size() > static_cast<std::size_t>(k)) candidates.resize(static_cast<std::size_t>(k));
  return candidates;
}

NeighborRecall::NeighborRecall(const KnowledgeGraph& kg, const FrequencyTable& freq, PeprOptions opts,
                               int k)
    : kg_(&kg), freq_(&freq), opts_(opts), k_(k) {
  if (k < 1) throw InputError("NeighborRecall: K must be >= 1");
}

const NeighborSet& NeighborRecall::recall(EntityId e) {
  if (auto it = cache_.find(e); it != cache_.end()) return it->second;
  NeighborSet set;
  if (!kg_->adjacency(e).empty()) {
    const auto res = pepr_scores(*kg_, *freq_, e, opts_);
    set = top_k_neighbors(*kg_, *freq_, res, e, k_);
  }
  return cache_.emplace(e, std::move(set)).first->second;
}

}  // namespace knowfuse
