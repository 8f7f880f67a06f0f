#include "knowfuse/trainer.hpp"

#include "knowfuse/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <random>

namespace knowfuse {

Adam::Adam(const TrainOptions& opts)
    : lr_(opts.learning_rate),
      b1_(opts.adam_beta1),
      b2_(opts.adam_beta2),
      eps_(opts.adam_eps),
      wd_(opts.weight_decay),
      clip_(opts.grad_clip) {}

double Adam::step(ParameterSet& params) {
  const auto& items = params.items();
  if (m_.empty()) {
    for (const auto& [name, p] : items) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  if (m_.size() != items.size()) throw InvariantError("Adam: parameter set changed between steps");

  double sq = 0.0;
  for (const auto& item : items) {
    Tensor p = item.second;
    if (p.has_grad()) sq += p.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw InvariantError("Adam: non-finite gradient norm");
  const double factor = (clip_ > 0.0 && norm > clip_) ? clip_ / norm : 1.0;

  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor p = items[i].second;
    if (!p.has_grad()) continue;
    const Matrix g = p.grad() * factor;
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    Matrix& w = p.mutable_value();
    if (wd_ > 0.0) w *= (1.0 - lr_ * wd_);
    w.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
  params.zero_grad();
  return norm;
}

namespace {

StepLog to_log(int step, const LossBreakdown& loss) {
  return {step,
          loss.mlm.item(),
          loss.sop.item(),
          loss.lex.item(),
          loss.mnem.item(),
          loss.mmem.item(),
          loss.total.item()};
}

// Independent seed per (stream, step) so batches do not depend on earlier steps.
std::uint64_t mix(std::uint64_t seed, std::uint64_t stream, std::uint64_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(step)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

std::vector<Document> pick_documents(std::span<const Document> docs, int batch_size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, docs.size() - 1);
  std::vector<Document> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) out.push_back(docs[pick(rng)]);
  return out;
}

}  // namespace

PretrainResult pretrain(KnowledgeModel& model, const PretrainData& data, const TrainOptions& opts,
                        std::uint64_t seed, const std::function<void(const StepLog&)>& on_step) {
  opts.validate();
  if (data.kg == nullptr || data.vocab == nullptr || data.freq == nullptr) {
    throw InputError("pretrain: graph, vocabulary and frequency table are required");
  }
  if (data.documents.empty()) throw InputError("pretrain: empty corpus");
  const ModelConfig& cfg = model.config();
  if (static_cast<int>(data.vocab->size()) != cfg.vocab_size) {
    throw InputError("pretrain: vocabulary size " + std::to_string(data.vocab->size()) +
                     " does not match vocab_size " + std::to_string(cfg.vocab_size));
  }

  const PeprOptions pepr{cfg.pepr_damping, cfg.pepr_max_iters, cfg.pepr_tol};
  NeighborRecall recall(*data.kg, *data.freq, pepr, cfg.top_k);
  const NegativeSampler sampler(*data.kg, *data.freq);

  BatchOptions bopts;
  bopts.max_len = cfg.max_len;
  bopts.mlm_prob = opts.mlm_prob;
  bopts.mention_mask_prob = opts.mention_mask_prob;
  bopts.sop_swap_prob = opts.sop_swap_prob;
  bopts.hit_ratio = opts.hit_ratio;
  bopts.k_neg = cfg.lambda1 > 0.0 ? cfg.k_neg : 0;

  std::mt19937_64 dropout_rng(mix(seed, 3, 0));
  const ForwardContext ctx{true, cfg.dropout, &dropout_rng};
  Adam adam(opts);
  PretrainResult result;

  if (!model.target_embeddings()) {
    LossSettings warm;
    warm.mlm_only = true;
    warm.infuse = false;
    for (int s = 1; s <= opts.embedding_warmup_steps; ++s) {
      const auto docs = pick_documents(data.documents, opts.batch_size, mix(seed, 0, static_cast<std::uint64_t>(s)));
      const PretrainBatch batch = build_pretrain_batch(docs, *data.kg, recall, nullptr, *data.vocab,
                                                       BatchOptions{bopts.max_len, bopts.mlm_prob, 0.0,
                                                                    bopts.sop_swap_prob, 0.0, 0},
                                                       mix(seed, 1, static_cast<std::uint64_t>(s)));
      if (batch.examples.empty()) continue;
      const LossBreakdown loss = model.compute_loss(batch, *data.kg, nullptr, warm, ctx);
      loss.total.backward();
      adam.step(model.params());
      result.warmup.push_back(to_log(s, loss));
    }
    model.freeze_target_embeddings();
  }

  LossSettings settings;
  settings.lambda1 = cfg.lambda1;
  settings.lambda2 = cfg.lambda2;
  settings.infuse = cfg.infusion_enabled;
  Adam main_opt(opts);
  for (int s = 1; s <= opts.steps; ++s) {
    const auto docs = pick_documents(data.documents, opts.batch_size, mix(seed, 10, static_cast<std::uint64_t>(s)));
    const PretrainBatch batch = build_pretrain_batch(docs, *data.kg, recall, &sampler, *data.vocab, bopts,
                                                     mix(seed, 11, static_cast<std::uint64_t>(s)));
    if (batch.examples.empty()) throw InputError("pretrain: every sampled document is shorter than 4 tokens");
    const LossBreakdown loss = model.compute_loss(batch, *data.kg, &sampler, settings, ctx);
    loss.total.backward();
    main_opt.step(model.params());
    result.log.push_back(to_log(s, loss));
    if (on_step) on_step(result.log.back());
  }
  return result;
}

void write_loss_log(std::ostream& out, std::span<const StepLog> log) {
  for (const auto& s : log) {
    const nlohmann::ordered_json j = {{"step", s.step}, {"L_EX", s.lex}, {"L_MNeM", s.mnem}, {"L_MMeM", s.mmem},
                              {"total", s.total}};
    out << j.dump() << '\n';
  }
}

std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  if (window == 0) throw InputError("moving_average: window must be positive");
  std::vector<double> out;
  out.reserve(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out.push_back(acc / static_cast<double>(std::min(i + 1, window)));
  }
  return out;
}

}  // namespace knowfuse
