#include "todkit/transformer.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "todkit/error.hpp"

namespace tod {
namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMap = Eigen::Map<const Mat>;
using GMap = Eigen::Map<Mat>;

constexpr double kNormEps = 1e-5;

struct Ctx {
  const double* p;
  double* g;  // null when no gradient is wanted

  CMap m(const Block& b) const { return CMap(p + b.offset, b.rows, b.cols); }
  GMap gm(const Block& b) const { return GMap(g + b.offset, b.rows, b.cols); }
};

Mat linear(const Ctx& c, const LinearBlocks& l, const Mat& x) {
  Mat y = x * c.m(l.weight);
  y.rowwise() += c.m(l.bias).row(0);
  return y;
}

Mat linear_back(const Ctx& c, const LinearBlocks& l, const Mat& x, const Mat& dy) {
  c.gm(l.weight).noalias() += x.transpose() * dy;
  c.gm(l.bias) += dy.colwise().sum();
  return dy * c.m(l.weight).transpose();
}

struct NormCache {
  Mat xhat;
  Vec inv_std;
};

Mat layer_norm(const Ctx& c, const NormBlocks& n, const Mat& x, NormCache* cache) {
  const auto rows = x.rows();
  Mat xhat(rows, x.cols());
  Vec inv(rows);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const double mu = x.row(t).mean();
    auto centered = (x.row(t).array() - mu).eval();
    const double var = centered.square().mean();
    inv(t) = 1.0 / std::sqrt(var + kNormEps);
    xhat.row(t) = centered * inv(t);
  }
  Mat y = (xhat.array().rowwise() * c.m(n.gain).row(0).array()).matrix();
  y.rowwise() += c.m(n.shift).row(0);
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

Mat layer_norm_back(const Ctx& c, const NormBlocks& n, const NormCache& cache, const Mat& dy) {
  c.gm(n.gain) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  c.gm(n.shift) += dy.colwise().sum();
  Mat dxhat = (dy.array().rowwise() * c.m(n.gain).row(0).array()).matrix();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    const double m1 = dxhat.row(t).mean();
    const double m2 = (dxhat.row(t).array() * cache.xhat.row(t).array()).mean();
    dx.row(t) = cache.inv_std(t) * (dxhat.row(t).array() - m1 - cache.xhat.row(t).array() * m2);
  }
  return dx;
}

constexpr double kGeluA = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluB = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluA * (x + kGeluB * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluA * (x + kGeluB * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluA * (1.0 + 3.0 * kGeluB * x * x);
}

struct FfnCache {
  Mat x, pre, act;
};

Mat feed_forward(const Ctx& c, const FeedForwardBlocks& f, const Mat& x, FfnCache* cache) {
  Mat pre = linear(c, f.in, x);
  Mat act = pre.unaryExpr(&gelu);
  Mat y = linear(c, f.out, act);
  if (cache != nullptr) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

Mat feed_forward_back(const Ctx& c, const FeedForwardBlocks& f, const FfnCache& cache, const Mat& dy) {
  Mat dact = linear_back(c, f.out, cache.act, dy);
  Mat dpre = (dact.array() * cache.pre.unaryExpr(&gelu_grad).array()).matrix();
  return linear_back(c, f.in, cache.x, dpre);
}

struct AttnCache {
  Mat xq, xkv, q, k, v, o;
  std::vector<Mat> probs;
};

Mat attention(const Ctx& c, const AttentionBlocks& a, const Mat& xq, const Mat& xkv, bool causal, int heads,
              AttnCache* cache) {
  Mat q = linear(c, a.query, xq);
  Mat k = linear(c, a.key, xkv);
  Mat v = linear(c, a.value, xkv);
  const int width = static_cast<int>(q.cols());
  const int dh = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat o(q.rows(), width);
  std::vector<Mat> probs;
  if (cache != nullptr) probs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Mat s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      if (causal) {
        for (Eigen::Index j = i + 1; j < s.cols(); ++j) s(i, j) = -std::numeric_limits<double>::infinity();
      }
      const double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    o.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
    if (cache != nullptr) probs.push_back(std::move(s));
  }
  Mat y = linear(c, a.output, o);
  if (cache != nullptr) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->o = std::move(o);
    cache->probs = std::move(probs);
  }
  return y;
}

// Returns (d xq, d xkv).
std::pair<Mat, Mat> attention_back(const Ctx& c, const AttentionBlocks& a, const AttnCache& cache,
                                   const Mat& dy, int heads) {
  Mat d_o = linear_back(c, a.output, cache.o, dy);
  const int width = static_cast<int>(cache.q.cols());
  const int dh = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dq(cache.q.rows(), width), dk(cache.k.rows(), width), dv(cache.v.rows(), width);
  for (int h = 0; h < heads; ++h) {
    const Mat& p = cache.probs[static_cast<std::size_t>(h)];
    Mat doh = d_o.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh) = p.transpose() * doh;
    Mat dp = doh * cache.v.middleCols(h * dh, dh).transpose();
    Vec r = (p.array() * dp.array()).rowwise().sum();
    Mat ds = (p.array() * (dp.array().colwise() - r.array())).matrix() * scale;
    dq.middleCols(h * dh, dh) = ds * cache.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * cache.q.middleCols(h * dh, dh);
  }
  Mat dxq = linear_back(c, a.query, cache.xq, dq);
  Mat dxkv = linear_back(c, a.key, cache.xkv, dk);
  dxkv += linear_back(c, a.value, cache.xkv, dv);
  return {std::move(dxq), std::move(dxkv)};
}

struct EncoderLayerCache {
  NormCache n1, n2;
  AttnCache self;
  FfnCache ffn;
};

struct DecoderLayerCache {
  NormCache n1, n2, n3;
  AttnCache self, cross;
  FfnCache ffn;
};

struct ForwardCache {
  std::vector<EncoderLayerCache> enc;
  NormCache enc_norm;
  std::vector<DecoderLayerCache> dec;
  NormCache dec_norm;
  Mat dec_out;  // normalized decoder states fed to the output projection
};

}  // namespace

void TransformerConfig::validate() const {
  if (vocab_size <= 0 || encoder_layers < 0 || decoder_layers < 0 || heads <= 0 || width <= 0 ||
      ff_width <= 0 || max_positions <= 0) {
    throw ArgumentError("transformer sizes must be positive");
  }
  if (width % heads != 0) throw ArgumentError("width must be divisible by heads");
}

Transformer::Transformer(const TransformerConfig& config) : config_(config) {
  config_.validate();
  auto& L = layout_;
  auto alloc = [&](int rows, int cols) {
    Block b{L.total, rows, cols};
    L.total += b.size();
    return b;
  };
  const int d = config_.width;
  auto linear_blocks = [&](int in, int out) { return LinearBlocks{alloc(in, out), alloc(1, out)}; };
  auto norm_blocks = [&] { return NormBlocks{alloc(1, d), alloc(1, d)}; };
  auto attn_blocks = [&] {
    return AttentionBlocks{linear_blocks(d, d), linear_blocks(d, d), linear_blocks(d, d), linear_blocks(d, d)};
  };
  auto ffn_blocks = [&] { return FeedForwardBlocks{linear_blocks(d, config_.ff_width), linear_blocks(config_.ff_width, d)}; };

  L.token_embedding = alloc(config_.vocab_size, d);
  L.position_embedding = alloc(config_.max_positions, d);
  for (int i = 0; i < config_.encoder_layers; ++i) {
    EncoderLayerBlocks e;
    e.norm1 = norm_blocks();
    e.self = attn_blocks();
    e.norm2 = norm_blocks();
    e.ffn = ffn_blocks();
    L.encoder.push_back(e);
  }
  L.encoder_norm = norm_blocks();
  for (int i = 0; i < config_.decoder_layers; ++i) {
    DecoderLayerBlocks e;
    e.norm1 = norm_blocks();
    e.self = attn_blocks();
    e.norm2 = norm_blocks();
    e.cross = attn_blocks();
    e.norm3 = norm_blocks();
    e.ffn = ffn_blocks();
    L.decoder.push_back(e);
  }
  L.decoder_norm = norm_blocks();
  L.output = linear_blocks(d, config_.vocab_size);

  params_.assign(L.total, 0.0);
  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](const Block& b, double stddev) {
    for (std::size_t i = 0; i < b.size(); ++i) params_[b.offset + i] = stddev * normal(rng);
  };
  auto init_linear = [&](const LinearBlocks& l) { fill(l.weight, 1.0 / std::sqrt(static_cast<double>(l.weight.rows))); };
  auto init_norm = [&](const NormBlocks& n) {
    for (std::size_t i = 0; i < n.gain.size(); ++i) params_[n.gain.offset + i] = 1.0;
  };
  auto init_attn = [&](const AttentionBlocks& a) {
    init_linear(a.query);
    init_linear(a.key);
    init_linear(a.value);
    init_linear(a.output);
  };
  fill(L.token_embedding, 0.5);
  fill(L.position_embedding, 0.5);
  for (const auto& e : L.encoder) {
    init_norm(e.norm1);
    init_attn(e.self);
    init_norm(e.norm2);
    init_linear(e.ffn.in);
    init_linear(e.ffn.out);
  }
  init_norm(L.encoder_norm);
  for (const auto& e : L.decoder) {
    init_norm(e.norm1);
    init_attn(e.self);
    init_norm(e.norm2);
    init_attn(e.cross);
    init_norm(e.norm3);
    init_linear(e.ffn.in);
    init_linear(e.ffn.out);
  }
  init_norm(L.decoder_norm);
  init_linear(L.output);
}

namespace {

void check_tokens(std::span<const int> ids, const TransformerConfig& cfg, const char* what) {
  if (ids.empty()) throw ArgumentError(std::string(what) + " sequence is empty");
  if (static_cast<int>(ids.size()) > cfg.max_positions) {
    throw ArgumentError(std::string(what) + " sequence of " + std::to_string(ids.size()) +
                        " tokens exceeds max_positions " + std::to_string(cfg.max_positions));
  }
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size) throw ArgumentError(std::string(what) + " token id out of range");
  }
}

Mat embed(const Ctx& c, const TransformerLayout& L, std::span<const int> ids) {
  auto table = c.m(L.token_embedding);
  auto pos = c.m(L.position_embedding);
  Mat x(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    x.row(static_cast<Eigen::Index>(t)) = table.row(ids[t]) + pos.row(static_cast<Eigen::Index>(t));
  }
  return x;
}

void embed_back(const Ctx& c, const TransformerLayout& L, std::span<const int> ids, const Mat& dx) {
  auto table = c.gm(L.token_embedding);
  auto pos = c.gm(L.position_embedding);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    table.row(ids[t]) += dx.row(static_cast<Eigen::Index>(t));
    pos.row(static_cast<Eigen::Index>(t)) += dx.row(static_cast<Eigen::Index>(t));
  }
}

Mat encode(const Ctx& c, const TransformerLayout& L, int heads, std::span<const int> src, ForwardCache* cache) {
  Mat h = embed(c, L, src);
  if (cache != nullptr) cache->enc.resize(L.encoder.size());
  for (std::size_t i = 0; i < L.encoder.size(); ++i) {
    const auto& b = L.encoder[i];
    EncoderLayerCache* lc = cache != nullptr ? &cache->enc[i] : nullptr;
    Mat a = layer_norm(c, b.norm1, h, lc ? &lc->n1 : nullptr);
    h += attention(c, b.self, a, a, false, heads, lc ? &lc->self : nullptr);
    Mat f = layer_norm(c, b.norm2, h, lc ? &lc->n2 : nullptr);
    h += feed_forward(c, b.ffn, f, lc ? &lc->ffn : nullptr);
  }
  return layer_norm(c, L.encoder_norm, h, cache ? &cache->enc_norm : nullptr);
}

Mat decode(const Ctx& c, const TransformerLayout& L, int heads, std::span<const int> tgt, const Mat& enc,
           ForwardCache* cache) {
  Mat y = embed(c, L, tgt);
  if (cache != nullptr) cache->dec.resize(L.decoder.size());
  for (std::size_t i = 0; i < L.decoder.size(); ++i) {
    const auto& b = L.decoder[i];
    DecoderLayerCache* lc = cache != nullptr ? &cache->dec[i] : nullptr;
    Mat a = layer_norm(c, b.norm1, y, lc ? &lc->n1 : nullptr);
    y += attention(c, b.self, a, a, true, heads, lc ? &lc->self : nullptr);
    Mat q = layer_norm(c, b.norm2, y, lc ? &lc->n2 : nullptr);
    y += attention(c, b.cross, q, enc, false, heads, lc ? &lc->cross : nullptr);
    Mat f = layer_norm(c, b.norm3, y, lc ? &lc->n3 : nullptr);
    y += feed_forward(c, b.ffn, f, lc ? &lc->ffn : nullptr);
  }
  return layer_norm(c, L.decoder_norm, y, cache ? &cache->dec_norm : nullptr);
}

}  // namespace

double Transformer::sequence_loss(std::span<const int> source, std::span<const int> target_in,
                                  std::span<const int> target_out, std::span<double> grad) const {
  check_tokens(source, config_, "source");
  check_tokens(target_in, config_, "target");
  if (target_out.size() != target_in.size()) throw ArgumentError("target_in/target_out length mismatch");
  for (int id : target_out) {
    if (id < 0 || id >= config_.vocab_size) throw ArgumentError("target token id out of range");
  }
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != params_.size()) throw ArgumentError("gradient buffer has wrong size");

  Ctx c{params_.data(), want_grad ? grad.data() : nullptr};
  ForwardCache cache;
  ForwardCache* cp = want_grad ? &cache : nullptr;
  const int heads = config_.heads;
  Mat enc = encode(c, layout_, heads, source, cp);
  Mat z = decode(c, layout_, heads, target_in, enc, cp);
  Mat logits = linear(c, layout_.output, z);

  double loss = 0.0;
  Mat dlogits;
  if (want_grad) dlogits.resize(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double mx = logits.row(t).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(t).array() - mx).exp();
    const double sum = e.sum();
    const int target = target_out[static_cast<std::size_t>(t)];
    loss += std::log(sum) + mx - logits(t, target);
    if (want_grad) {
      dlogits.row(t) = e / sum;
      dlogits(t, target) -= 1.0;
    }
  }
  if (!want_grad) return loss;

  // Backward.
  const auto& L = layout_;
  Mat dy = layer_norm_back(c, L.decoder_norm, cache.dec_norm, linear_back(c, L.output, z, dlogits));
  Mat denc = Mat::Zero(enc.rows(), enc.cols());
  for (std::size_t i = L.decoder.size(); i-- > 0;) {
    const auto& b = L.decoder[i];
    const auto& lc = cache.dec[i];
    dy += layer_norm_back(c, b.norm3, lc.n3, feed_forward_back(c, b.ffn, lc.ffn, dy));
    auto [dq, dkv] = attention_back(c, b.cross, lc.cross, dy, heads);
    denc += dkv;
    dy += layer_norm_back(c, b.norm2, lc.n2, dq);
    auto [sq, skv] = attention_back(c, b.self, lc.self, dy, heads);
    sq += skv;
    dy += layer_norm_back(c, b.norm1, lc.n1, sq);
  }
  embed_back(c, L, target_in, dy);

  Mat dh = layer_norm_back(c, L.encoder_norm, cache.enc_norm, denc);
  for (std::size_t i = L.encoder.size(); i-- > 0;) {
    const auto& b = L.encoder[i];
    const auto& lc = cache.enc[i];
    dh += layer_norm_back(c, b.norm2, lc.n2, feed_forward_back(c, b.ffn, lc.ffn, dh));
    auto [sq, skv] = attention_back(c, b.self, lc.self, dh, heads);
    sq += skv;
    dh += layer_norm_back(c, b.norm1, lc.n1, sq);
  }
  embed_back(c, L, source, dh);
  return loss;
}

std::vector<std::vector<double>> Transformer::logits(std::span<const int> source,
                                                     std::span<const int> target_in) const {
  check_tokens(source, config_, "source");
  check_tokens(target_in, config_, "target");
  Ctx c{params_.data(), nullptr};
  Mat enc = encode(c, layout_, config_.heads, source, nullptr);
  Mat out = linear(c, layout_.output, decode(c, layout_, config_.heads, target_in, enc, nullptr));
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index t = 0; t < out.rows(); ++t) {
    auto& row = rows[static_cast<std::size_t>(t)];
    row.reserve(static_cast<std::size_t>(out.cols()));
    for (Eigen::Index v = 0; v < out.cols(); ++v) row.push_back(out(t, v));
  }
  return rows;
}

std::vector<int> Transformer::greedy(std::span<const int> source, int bos, int eos, std::size_t max_tokens) const {
  check_tokens(source, config_, "source");
  Ctx c{params_.data(), nullptr};
  Mat enc = encode(c, layout_, config_.heads, source, nullptr);
  auto w = c.m(layout_.output.weight);
  auto bias = c.m(layout_.output.bias);
  std::vector<int> prefix = {bos};
  std::vector<int> out;
  while (out.size() < max_tokens && static_cast<int>(prefix.size()) <= config_.max_positions) {
    Mat z = decode(c, layout_, config_.heads, prefix, enc, nullptr);
    Eigen::RowVectorXd row = z.row(z.rows() - 1) * w + bias.row(0);
    Eigen::Index best = 0;
    row.maxCoeff(&best);
    const int next = static_cast<int>(best);
    if (next == eos) break;
    out.push_back(next);
    prefix.push_back(next);
  }
  return out;
}

}  // namespace tod
