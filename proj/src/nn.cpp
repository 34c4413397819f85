#include "zlik/nn.hpp"

#include <cmath>

#include "zlik/errors.hpp"

namespace zlik::nn {

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t d_model, int64_t heads, double dropout)
    : heads_(heads) {
  if (heads < 1 || d_model % heads != 0) {
    throw ShapeError("attention width must be a multiple of the head count");
  }
  q_proj = register_module("q_proj", torch::nn::Linear(d_model, d_model));
  k_proj = register_module("k_proj", torch::nn::Linear(d_model, d_model));
  v_proj = register_module("v_proj", torch::nn::Linear(d_model, d_model));
  out_proj = register_module("out_proj", torch::nn::Linear(d_model, d_model));
  attn_drop_ = register_module("attn_drop", torch::nn::Dropout(dropout));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& query,
                                              const torch::Tensor& key_value) {
  const auto n = query.size(0);
  const auto sq = query.size(1);
  const auto sk = key_value.size(1);
  const auto e = query.size(2);
  const auto dh = e / heads_;
  auto split = [&](const torch::Tensor& t, int64_t s) {
    return t.view({n, s, heads_, dh}).transpose(1, 2);  // (N, h, S, dh)
  };
  auto q = split(q_proj->forward(query), sq);
  auto k = split(k_proj->forward(key_value), sk);
  auto v = split(v_proj->forward(key_value), sk);
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
  auto weights = attn_drop_->forward(torch::softmax(scores, -1));
  auto ctx = torch::matmul(weights, v).transpose(1, 2).reshape({n, sq, e});
  return out_proj->forward(ctx);
}

FeedForwardImpl::FeedForwardImpl(int64_t d_model, int64_t d_ff, double dropout) {
  fc1 = register_module("fc1", torch::nn::Linear(d_model, d_ff));
  fc2 = register_module("fc2", torch::nn::Linear(d_ff, d_model));
  drop_ = register_module("drop", torch::nn::Dropout(dropout));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) {
  return fc2->forward(drop_->forward(torch::gelu(fc1->forward(x))));
}

EncoderBlockImpl::EncoderBlockImpl(int64_t d_model, int64_t heads, int64_t d_ff, double dropout) {
  attn = register_module("attn", MultiHeadAttention(d_model, heads, dropout));
  ff = register_module("ff", FeedForward(d_model, d_ff, dropout));
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})));
  drop_ = register_module("drop", torch::nn::Dropout(dropout));
}

torch::Tensor EncoderBlockImpl::forward(const torch::Tensor& x) {
  auto h = norm1->forward(x + drop_->forward(attn->forward(x, x)));
  return norm2->forward(h + drop_->forward(ff->forward(h)));
}

DecoderBlockImpl::DecoderBlockImpl(int64_t d_model, int64_t heads, int64_t d_ff, double dropout) {
  self_attn = register_module("self_attn", MultiHeadAttention(d_model, heads, dropout));
  cross_attn = register_module("cross_attn", MultiHeadAttention(d_model, heads, dropout));
  ff = register_module("ff", FeedForward(d_model, d_ff, dropout));
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})));
  norm3 = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})));
  drop_ = register_module("drop", torch::nn::Dropout(dropout));
}

torch::Tensor DecoderBlockImpl::forward(const torch::Tensor& query, const torch::Tensor& memory) {
  auto q = norm1->forward(query + drop_->forward(self_attn->forward(query, query)));
  q = norm2->forward(q + drop_->forward(cross_attn->forward(q, memory)));
  return norm3->forward(q + drop_->forward(ff->forward(q)));
}

int64_t parameter_count(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

int64_t copy_shared_state(const torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard no_grad;
  const auto src_params = from.named_parameters();
  const auto src_buffers = from.named_buffers();
  int64_t copied = 0;
  for (auto& p : to.named_parameters()) {
    if (const auto* s = src_params.find(p.key())) {
      p.value().copy_(*s);
      ++copied;
    }
  }
  for (auto& b : to.named_buffers()) {
    if (const auto* s = src_buffers.find(b.key())) {
      b.value().copy_(*s);
      ++copied;
    }
  }
  return copied;
}

void zero_parameters(torch::nn::Module& m, const std::vector<std::string>& name_filters) {
  torch::NoGradGuard no_grad;
  for (auto& p : m.named_parameters()) {
    for (const auto& f : name_filters) {
      if (p.key().find(f) != std::string::npos) {
        p.value().zero_();
        break;
      }
    }
  }
}

}  // namespace zlik::nn
