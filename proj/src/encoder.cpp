#include "knowfuse/encoder.hpp"

#include "knowfuse/errors.hpp"

#include <cmath>
#include <numeric>

namespace knowfuse {

namespace {

Matrix ones_row(int n) { return Matrix::Ones(1, n); }
Matrix zeros_row(int n) { return Matrix::Zero(1, n); }

}  // namespace

TransformerEncoder::TransformerEncoder(const ModelConfig& cfg, ParameterSet& params, std::mt19937_64& rng)
    : d1_(cfg.d1), heads_(cfg.heads), vocab_(cfg.vocab_size), max_len_(cfg.max_len) {
  const double sd = 0.02;
  const int ffn = cfg.d1 * cfg.ffn_multiplier;
  tok_ = params.add("encoder.embed.token", normal_init(cfg.vocab_size, cfg.d1, sd, rng));
  pos_ = params.add("encoder.embed.position", normal_init(cfg.max_len, cfg.d1, sd, rng));
  seg_ = params.add("encoder.embed.segment", normal_init(2, cfg.d1, sd, rng));
  ln_g_ = params.add("encoder.embed.ln.gain", ones_row(cfg.d1));
  ln_b_ = params.add("encoder.embed.ln.bias", zeros_row(cfg.d1));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l + 1) + ".";
    Block b;
    b.wq = params.add(p + "attn.wq", normal_init(cfg.d1, cfg.d1, sd, rng));
    b.bq = params.add(p + "attn.bq", zeros_row(cfg.d1));
    b.wk = params.add(p + "attn.wk", normal_init(cfg.d1, cfg.d1, sd, rng));
    b.bk = params.add(p + "attn.bk", zeros_row(cfg.d1));
    b.wv = params.add(p + "attn.wv", normal_init(cfg.d1, cfg.d1, sd, rng));
    b.bv = params.add(p + "attn.bv", zeros_row(cfg.d1));
    b.wo = params.add(p + "attn.wo", normal_init(cfg.d1, cfg.d1, sd, rng));
    b.bo = params.add(p + "attn.bo", zeros_row(cfg.d1));
    b.ln1_g = params.add(p + "ln1.gain", ones_row(cfg.d1));
    b.ln1_b = params.add(p + "ln1.bias", zeros_row(cfg.d1));
    b.w1 = params.add(p + "ffn.w1", normal_init(cfg.d1, ffn, sd, rng));
    b.b1 = params.add(p + "ffn.b1", zeros_row(ffn));
    b.w2 = params.add(p + "ffn.w2", normal_init(ffn, cfg.d1, sd, rng));
    b.b2 = params.add(p + "ffn.b2", zeros_row(cfg.d1));
    b.ln2_g = params.add(p + "ln2.gain", ones_row(cfg.d1));
    b.ln2_b = params.add(p + "ln2.bias", zeros_row(cfg.d1));
    blocks_.push_back(std::move(b));
  }
}

Tensor TransformerEncoder::embed(std::span<const int> ids, std::span<const int> segments,
                                 const ForwardContext& ctx) const {
  const auto n = static_cast<int>(ids.size());
  if (n > max_len_) {
    throw InputError("encode: sequence length " + std::to_string(n) + " exceeds max_len " +
                     std::to_string(max_len_));
  }
  if (segments.size() != ids.size()) throw InputError("encode: one segment id per token required");
  for (int id : ids) {
    if (id < 0 || id >= vocab_) throw InputError("encode: token id " + std::to_string(id) + " out of range");
  }
  std::vector<int> positions(static_cast<std::size_t>(n));
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = ag::add(ag::gather_rows(tok_, ids), ag::gather_rows(pos_, positions));
  x = ag::add(x, ag::gather_rows(seg_, segments));
  return ctx.maybe_dropout(ag::layer_norm(x, ln_g_, ln_b_));
}

Tensor TransformerEncoder::layer(int index, const Tensor& x, const std::vector<bool>& key_is_pad,
                                 const ForwardContext& ctx) const {
  const Block& b = blocks_.at(static_cast<std::size_t>(index));
  const auto n = x.rows();
  const int dh = d1_ / heads_;
  const Tensor q = affine(x, b.wq, b.bq);
  const Tensor k = affine(x, b.wk, b.bk);
  const Tensor v = affine(x, b.wv, b.bv);

  Matrix mask = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (key_is_pad[static_cast<std::size_t>(j)]) mask.col(j).setConstant(-1e9);
  }
  const Tensor mask_t = Tensor::constant(std::move(mask));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor context;
  for (int h = 0; h < heads_; ++h) {
    const Tensor qh = ag::slice_cols(q, h * dh, dh);
    const Tensor kh = ag::slice_cols(k, h * dh, dh);
    const Tensor vh = ag::slice_cols(v, h * dh, dh);
    Tensor att = ag::softmax_rows(ag::add(ag::scale(ag::matmul_transposed(qh, kh), inv_sqrt), mask_t));
    att = ctx.maybe_dropout(att);
    const Tensor out = ag::matmul(att, vh);
    context = h == 0 ? out : ag::concat_cols(context, out);
  }
  const Tensor attn_out = ctx.maybe_dropout(affine(context, b.wo, b.bo));
  const Tensor h1 = ag::layer_norm(ag::add(x, attn_out), b.ln1_g, b.ln1_b);
  const Tensor ff = ctx.maybe_dropout(affine(ag::gelu(affine(h1, b.w1, b.b1)), b.w2, b.b2));
  return ag::layer_norm(ag::add(h1, ff), b.ln2_g, b.ln2_b);
}

EncoderState TransformerEncoder::encode(std::span<const int> ids, std::span<const int> segments, int pad_id,
                                        const ForwardContext& ctx, int hook_layer,
                                        const LayerHook& hook) const {
  std::vector<bool> key_is_pad(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) key_is_pad[i] = ids[i] == pad_id;
  EncoderState state;
  state.layers.push_back(embed(ids, segments, ctx));
  for (int l = 0; l < num_layers(); ++l) {
    Tensor out = layer(l, state.layers.back(), key_is_pad, ctx);
    if (hook && hook_layer == l + 1) out = hook(out);
    state.layers.push_back(std::move(out));
  }
  return state;
}

}  // namespace knowfuse
