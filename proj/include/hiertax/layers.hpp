#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hiertax/matrix.hpp"
#include "hiertax/rng.hpp"

namespace hiertax {

// One dense layer: weight (out x in), bias (out), gradient accumulators, and
// AdamW moment buffers. All five buffers share shapes by construction.
struct LinearParams {
    Matrix weight;
    std::vector<double> bias;
    Matrix grad_weight;
    std::vector<double> grad_bias;
    Matrix m_weight, v_weight;
    std::vector<double> m_bias, v_bias;

    LinearParams() = default;
    LinearParams(std::size_t out_dim, std::size_t in_dim)
        : weight(out_dim, in_dim),
          bias(out_dim, 0.0),
          grad_weight(out_dim, in_dim),
          grad_bias(out_dim, 0.0),
          m_weight(out_dim, in_dim),
          v_weight(out_dim, in_dim),
          m_bias(out_dim, 0.0),
          v_bias(out_dim, 0.0) {}

    std::size_t in_dim() const { return weight.cols; }
    std::size_t out_dim() const { return weight.rows; }

    void zero_grad() {
        grad_weight.fill(0.0);
        std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
    }
};

// Bounded uniform init in +-sqrt(6 / (fan_in + fan_out)); bias stays zero.
void init_glorot(LinearParams& params, Rng& rng);

// y = x * W^T + b, broadcast per row.
Matrix linear_forward(const LinearParams& params, const Matrix& input);

// Accumulates dW += dY^T * X and db += colsum(dY); returns dX = dY * W.
Matrix linear_backward(LinearParams& params, const Matrix& input,
                       const Matrix& grad_output);

// Elementwise max(x, 0); subgradient at 0 is 0.
Matrix relu_forward(const Matrix& input);
Matrix relu_backward(const Matrix& input, const Matrix& grad_output);

// Inverted dropout: in train mode each entry is zeroed with probability
// `rate` and survivors are scaled by 1/(1-rate); eval mode is the identity.
// The drawn mask is written to *mask (scale factors) so backward can reuse it.
Matrix dropout_forward(const Matrix& input, double rate, bool train, Rng& rng,
                       Matrix* mask);
Matrix dropout_backward(const Matrix& mask, const Matrix& grad_output);

// Row-wise softmax with max-subtraction. Rows sum to 1 within 1e-12.
Matrix row_softmax(const Matrix& logits);
std::vector<double> softmax(const std::vector<double>& logits);

struct AdamWConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// Decoupled AdamW update with bias-corrected moments. step_index starts at 1.
// Throws DivergenceError on non-finite gradients.
void adamw_step(LinearParams& params, const AdamWConfig& config, long step_index);

}  // namespace hiertax
