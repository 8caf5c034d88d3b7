#include "hiertax/layers.hpp"

#include <algorithm>
#include <cmath>

#include "hiertax/error.hpp"

namespace hiertax {

void init_glorot(LinearParams& params, Rng& rng) {
    const double bound =
        std::sqrt(6.0 / static_cast<double>(params.in_dim() + params.out_dim()));
    for (double& w : params.weight.data) w = rng.uniform(-bound, bound);
    std::fill(params.bias.begin(), params.bias.end(), 0.0);
}

Matrix linear_forward(const LinearParams& params, const Matrix& input) {
    if (input.cols != params.in_dim()) {
        throw ContractError("linear layer expects input dim " +
                            std::to_string(params.in_dim()) + ", got " +
                            input.shape_str());
    }
    Matrix out = matmul_nt(input, params.weight);
    add_row_vector(out, params.bias);
    return out;
}

Matrix linear_backward(LinearParams& params, const Matrix& input,
                       const Matrix& grad_output) {
    if (grad_output.rows != input.rows || grad_output.cols != params.out_dim()) {
        throw ContractError("linear backward shape mismatch: grad " +
                            grad_output.shape_str() + ", input " + input.shape_str());
    }
    Matrix dw = matmul_tn(grad_output, input);
    for (std::size_t i = 0; i < dw.data.size(); ++i) params.grad_weight.data[i] += dw.data[i];
    const std::vector<double> db = column_sums(grad_output);
    for (std::size_t i = 0; i < db.size(); ++i) params.grad_bias[i] += db[i];
    return matmul_nn(grad_output, params.weight);
}

Matrix relu_forward(const Matrix& input) {
    Matrix out = input;
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    return out;
}

Matrix relu_backward(const Matrix& input, const Matrix& grad_output) {
    if (!input.same_shape(grad_output)) {
        throw ContractError("relu backward shape mismatch: " + input.shape_str() +
                            " vs " + grad_output.shape_str());
    }
    Matrix out = grad_output;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        if (input.data[i] <= 0.0) out.data[i] = 0.0;
    }
    return out;
}

Matrix dropout_forward(const Matrix& input, double rate, bool train, Rng& rng,
                       Matrix* mask) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ContractError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (!train || rate == 0.0) {
        if (mask != nullptr) *mask = Matrix();  // identity, nothing to reuse
        return input;
    }
    const double scale = 1.0 / (1.0 - rate);
    Matrix m(input.rows, input.cols);
    Matrix out = input;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double keep = rng.uniform() >= rate ? scale : 0.0;
        m.data[i] = keep;
        out.data[i] *= keep;
    }
    if (mask != nullptr) *mask = std::move(m);
    return out;
}

Matrix dropout_backward(const Matrix& mask, const Matrix& grad_output) {
    if (mask.data.empty()) return grad_output;  // was identity
    if (!mask.same_shape(grad_output)) {
        throw ContractError("dropout backward shape mismatch: " + mask.shape_str() +
                            " vs " + grad_output.shape_str());
    }
    Matrix out = grad_output;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
    return out;
}

Matrix row_softmax(const Matrix& logits) {
    Matrix out = logits;
    for (std::size_t r = 0; r < out.rows; ++r) {
        double* row = out.row_ptr(r);
        double max = row[0];
        for (std::size_t c = 1; c < out.cols; ++c) max = std::max(max, row[c]);
        double denom = 0.0;
        for (std::size_t c = 0; c < out.cols; ++c) {
            row[c] = std::exp(row[c] - max);
            denom += row[c];
        }
        for (std::size_t c = 0; c < out.cols; ++c) row[c] /= denom;
    }
    return out;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    Matrix m(1, logits.size());
    m.data = logits;
    return row_softmax(m).data;
}

namespace {

void adamw_update(std::vector<double>& values, const std::vector<double>& grads,
                  std::vector<double>& m, std::vector<double>& v,
                  const AdamWConfig& cfg, double bias1, double bias2) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / bias1;
        const double v_hat = v[i] / bias2;
        values[i] *= 1.0 - cfg.lr * cfg.weight_decay;  // decoupled decay
        values[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

}  // namespace

void adamw_step(LinearParams& params, const AdamWConfig& config, long step_index) {
    if (step_index < 1) throw ContractError("adamw step_index starts at 1");
    if (!all_finite(params.grad_weight) || !all_finite(params.grad_bias)) {
        throw DivergenceError("non-finite gradient in AdamW step " +
                              std::to_string(step_index));
    }
    const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(step_index));
    const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(step_index));
    adamw_update(params.weight.data, params.grad_weight.data, params.m_weight.data,
                 params.v_weight.data, config, bias1, bias2);
    adamw_update(params.bias, params.grad_bias, params.m_bias, params.v_bias, config,
                 bias1, bias2);
}

}  // namespace hiertax
