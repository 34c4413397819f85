#pragma once

#include <torch/torch.h>

namespace zlik::nn {

// Multi-head scaled dot-product attention over batch-first sequences.
// query (N, Sq, E), key_value (N, Sk, E) -> (N, Sq, E). No masking: every
// query sees every key.
class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(int64_t d_model, int64_t heads, double dropout);
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& key_value);

  torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, out_proj{nullptr};

 private:
  int64_t heads_;
  torch::nn::Dropout attn_drop_{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

class FeedForwardImpl : public torch::nn::Module {
 public:
  FeedForwardImpl(int64_t d_model, int64_t d_ff, double dropout);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};

 private:
  torch::nn::Dropout drop_{nullptr};
};
TORCH_MODULE(FeedForward);

// Post-norm transformer encoder layer (self-attention, then feed-forward).
class EncoderBlockImpl : public torch::nn::Module {
 public:
  EncoderBlockImpl(int64_t d_model, int64_t heads, int64_t d_ff, double dropout);
  torch::Tensor forward(const torch::Tensor& x);

  MultiHeadAttention attn{nullptr};
  FeedForward ff{nullptr};
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};

 private:
  torch::nn::Dropout drop_{nullptr};
};
TORCH_MODULE(EncoderBlock);

// Post-norm decoder layer: query self-attention (unmasked), cross-attention
// into memory, feed-forward.
class DecoderBlockImpl : public torch::nn::Module {
 public:
  DecoderBlockImpl(int64_t d_model, int64_t heads, int64_t d_ff, double dropout);
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& memory);

  MultiHeadAttention self_attn{nullptr}, cross_attn{nullptr};
  FeedForward ff{nullptr};
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr};

 private:
  torch::nn::Dropout drop_{nullptr};
};
TORCH_MODULE(DecoderBlock);

int64_t parameter_count(const torch::nn::Module& m);

// Copies every parameter and buffer of `to` from the same-named entry in
// `from`. Returns the number of tensors copied; names missing in `from` are
// left untouched.
int64_t copy_shared_state(const torch::nn::Module& from, torch::nn::Module& to);

// Zeroes every parameter whose name contains one of the filters.
void zero_parameters(torch::nn::Module& m, const std::vector<std::string>& name_filters);

}  // namespace zlik::nn
