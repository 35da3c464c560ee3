#include "sdiff/denoiser.hpp"

#include <cmath>
#include <fstream>

#include "sdiff/binio.hpp"
#include "sdiff/rng.hpp"

namespace sdiff {

namespace {

constexpr std::string_view kModelMagic = "SDIFFMDL";
constexpr std::uint32_t kModelVersion = 1;

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
void fill_uniform(Mat<T>& m, double limit, Rng& rng) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = static_cast<T>(rng.uniform(-limit, limit));
    }
}

template <typename T>
void xavier(Mat<T>& m, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    fill_uniform(m, limit, rng);
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Activations kept for the backward pass.
template <typename T>
struct Forward {
    Mat<T> gamma_hidden;  // w_f x (K B)
    Mat<T> beta_hidden;
    Mat<T> gamma;         // K x B
    Mat<T> embedding;     // d_t x B
    Mat<T> time_feat;     // d_t x B
    Mat<T> input;         // (K + d_t) x B
    Mat<T> pre;           // h x B
    Mat<T> act;           // h x B
    Mat<T> out;           // K x B
};

// Scalar FiLM net applied to every entry of `c`: returns w2^T tanh(w1 c + b1) + b2
// shaped like `c`, and stores the hidden activations.
template <typename T>
Mat<T> film_apply(const Mat<T>& w1, const Mat<T>& b1, const Mat<T>& w2, const Mat<T>& b2, const Mat<T>& c,
                  Mat<T>& hidden) {
    const Eigen::Index n = c.size();
    const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> flat(c.data(), n);
    hidden = (w1 * flat).colwise() + b1.col(0);
    hidden = hidden.array().tanh().matrix();
    Eigen::Matrix<T, 1, Eigen::Dynamic> out = w2.transpose() * hidden;
    out.array() += b2(0, 0);
    return Eigen::Map<const Mat<T>>(out.data(), c.rows(), c.cols());
}

template <typename T>
void film_backward(const Mat<T>& w2, const Mat<T>& c, const Mat<T>& hidden, const Mat<T>& upstream,
                   Mat<T>& gw1, Mat<T>& gb1, Mat<T>& gw2, Mat<T>& gb2) {
    const Eigen::Index n = c.size();
    const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> flat_c(c.data(), n);
    const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> flat_g(upstream.data(), n);
    gw2 = hidden * flat_g.transpose();
    gb2.resize(1, 1);
    gb2(0, 0) = flat_g.sum();
    Mat<T> dpre = (w2 * flat_g).array() * (T(1) - hidden.array().square());
    gw1 = dpre * flat_c.transpose();
    gb1 = dpre.rowwise().sum();
}

template <typename T>
void check_inputs(const DenoiserParams<T>& p, const Mat<T>& noisy, const Mat<T>& condition, const Vec<T>& t) {
    const auto k = static_cast<Eigen::Index>(p.shape.spectral_dim);
    require(noisy.rows() == k && condition.rows() == k, "dimension_mismatch",
            "denoiser expects spectra of size " + std::to_string(k));
    require(noisy.cols() == condition.cols() && noisy.cols() == t.size(), "dimension_mismatch",
            "denoiser batch columns disagree");
    require(noisy.allFinite() && condition.allFinite() && t.allFinite(), "non_finite",
            "non-finite denoiser input");
}

template <typename T>
Forward<T> forward(const DenoiserParams<T>& p, const Mat<T>& noisy, const Mat<T>& condition, const Vec<T>& t) {
    check_inputs(p, noisy, condition, t);
    const auto k = static_cast<Eigen::Index>(p.shape.spectral_dim);
    const auto dt = static_cast<Eigen::Index>(p.shape.time_dim);
    Forward<T> f;

    f.gamma = film_apply(p.gamma_w1, p.gamma_b1, p.gamma_w2, p.gamma_b2, condition, f.gamma_hidden);
    Mat<T> beta = film_apply(p.beta_w1, p.beta_b1, p.beta_w2, p.beta_b2, condition, f.beta_hidden);

    f.embedding = time_embedding<T>(p.shape.time_dim, t);
    f.time_feat = ((p.time_w * f.embedding).colwise() + p.time_b.col(0)).array().tanh().matrix();

    f.input.resize(k + dt, noisy.cols());
    f.input.topRows(k) = noisy + (f.gamma.array() * condition.array()).matrix() + beta;
    f.input.bottomRows(dt) = f.time_feat;

    f.pre = (p.trunk_w1 * f.input).colwise() + p.trunk_b1.col(0);
    f.act = f.pre.unaryExpr([](T z) { return z * sigmoid(z); });
    f.out = (p.trunk_w2 * f.act).colwise() + p.trunk_b2.col(0);
    return f;
}

}  // namespace

std::size_t parameter_count(const DenoiserShape& s) {
    return 2 * (3 * s.film_width + 1) + s.time_dim * s.time_dim + s.time_dim +
           (s.spectral_dim + s.time_dim) * s.hidden + s.hidden + s.hidden * s.spectral_dim + s.spectral_dim;
}

template <typename T>
DenoiserParams<T> DenoiserParams<T>::zeros(const DenoiserShape& shape) {
    require(shape.spectral_dim > 0 && shape.hidden > 0 && shape.film_width > 0, "invalid_argument",
            "denoiser dimensions must be positive");
    require(shape.time_dim >= 2 && shape.time_dim % 2 == 0, "invalid_argument",
            "time embedding size must be even and at least 2");
    const auto k = static_cast<Eigen::Index>(shape.spectral_dim);
    const auto h = static_cast<Eigen::Index>(shape.hidden);
    const auto dt = static_cast<Eigen::Index>(shape.time_dim);
    const auto wf = static_cast<Eigen::Index>(shape.film_width);

    DenoiserParams p;
    p.shape = shape;
    for (auto* m : {&p.gamma_w1, &p.gamma_b1, &p.gamma_w2, &p.beta_w1, &p.beta_b1, &p.beta_w2}) {
        *m = Matrix::Zero(wf, 1);
    }
    p.gamma_b2 = Matrix::Zero(1, 1);
    p.beta_b2 = Matrix::Zero(1, 1);
    p.time_w = Matrix::Zero(dt, dt);
    p.time_b = Matrix::Zero(dt, 1);
    p.trunk_w1 = Matrix::Zero(h, k + dt);
    p.trunk_b1 = Matrix::Zero(h, 1);
    p.trunk_w2 = Matrix::Zero(k, h);
    p.trunk_b2 = Matrix::Zero(k, 1);
    return p;
}

template <typename T>
std::size_t DenoiserParams<T>::size() const {
    std::size_t n = 0;
    for (const auto* m : tensors()) n += static_cast<std::size_t>(m->size());
    return n;
}

template <typename T>
bool DenoiserParams<T>::all_finite() const {
    for (const auto* m : tensors()) {
        if (!m->allFinite()) return false;
    }
    return true;
}

template <typename T>
template <typename U>
DenoiserParams<U> DenoiserParams<T>::cast() const {
    auto out = DenoiserParams<U>::zeros(shape);
    const auto src = tensors();
    const auto dst = out.tensors();
    for (std::size_t i = 0; i < kTensorCount; ++i) *dst[i] = src[i]->template cast<U>();
    return out;
}

template <typename T>
DenoiserParams<T> init_denoiser(const DenoiserShape& shape, std::uint64_t seed) {
    auto p = DenoiserParams<T>::zeros(shape);
    Rng rng(seed);
    fill_uniform(p.gamma_w1, 1.0, rng);
    fill_uniform(p.gamma_b1, 1.0, rng);
    fill_uniform(p.beta_w1, 1.0, rng);
    fill_uniform(p.beta_b1, 1.0, rng);
    xavier(p.time_w, rng);
    xavier(p.trunk_w1, rng);
    xavier(p.trunk_w2, rng);
    return p;
}

template <typename T>
Mat<T> time_embedding(std::size_t time_dim, const Vec<T>& t) {
    const auto half = static_cast<Eigen::Index>(time_dim / 2);
    Mat<T> emb(2 * half, t.size());
    for (Eigen::Index j = 0; j < half; ++j) {
        const double freq = 1000.0 * std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(half));
        for (Eigen::Index b = 0; b < t.size(); ++b) {
            const double phase = static_cast<double>(t[b]) * freq;
            emb(j, b) = static_cast<T>(std::sin(phase));
            emb(half + j, b) = static_cast<T>(std::cos(phase));
        }
    }
    return emb;
}

template <typename T>
Mat<T> denoise(const DenoiserParams<T>& p, const Mat<T>& noisy, const Mat<T>& condition, const Vec<T>& t) {
    return forward(p, noisy, condition, t).out;
}

template <typename T>
T loss_and_grad(const DenoiserParams<T>& p, const DenoiserBatch<T>& batch, DenoiserParams<T>* grad) {
    require(batch.noisy.cols() > 0, "invalid_argument", "empty batch");
    require(batch.target.rows() == batch.noisy.rows() && batch.target.cols() == batch.noisy.cols(),
            "dimension_mismatch", "target shape does not match the batch");
    auto f = forward(p, batch.noisy, batch.condition, batch.t);
    const auto b = static_cast<T>(batch.noisy.cols());
    const Mat<T> diff = f.out - batch.target;
    const T loss = diff.squaredNorm() / b;
    require(std::isfinite(static_cast<double>(loss)), "non_finite", "non-finite loss in denoiser forward pass");
    if (!grad) return loss;

    const auto k = static_cast<Eigen::Index>(p.shape.spectral_dim);
    const auto dt = static_cast<Eigen::Index>(p.shape.time_dim);
    auto& g = *grad;
    g.shape = p.shape;

    const Mat<T> d_out = (T(2) / b) * diff;
    g.trunk_w2.noalias() = d_out * f.act.transpose();
    g.trunk_b2 = d_out.rowwise().sum();

    Mat<T> d_pre = p.trunk_w2.transpose() * d_out;
    d_pre.array() *= f.pre.unaryExpr([](T z) {
                               const T s = sigmoid(z);
                               return s * (T(1) + z * (T(1) - s));
                           }).array();
    g.trunk_w1.noalias() = d_pre * f.input.transpose();
    g.trunk_b1 = d_pre.rowwise().sum();

    const Mat<T> d_input = p.trunk_w1.transpose() * d_pre;
    const Mat<T> d_time = d_input.bottomRows(dt).array() * (T(1) - f.time_feat.array().square());
    g.time_w.noalias() = d_time * f.embedding.transpose();
    g.time_b = d_time.rowwise().sum();

    const Mat<T> d_fused = d_input.topRows(k);
    const Mat<T> d_gamma = d_fused.array() * batch.condition.array();
    film_backward(p.gamma_w2, batch.condition, f.gamma_hidden, d_gamma, g.gamma_w1, g.gamma_b1,
                  g.gamma_w2, g.gamma_b2);
    film_backward(p.beta_w2, batch.condition, f.beta_hidden, d_fused, g.beta_w1, g.beta_b1, g.beta_w2,
                  g.beta_b2);
    return loss;
}

template <typename T>
AdamState<T> AdamState<T>::fresh(const DenoiserShape& shape, AdamConfig config) {
    return AdamState{DenoiserParams<T>::zeros(shape), DenoiserParams<T>::zeros(shape), 0, config};
}

template <typename T>
void adam_step(DenoiserParams<T>& p, const DenoiserParams<T>& g, AdamState<T>& s) {
    require(p.shape == g.shape && p.shape == s.m.shape, "dimension_mismatch", "adam_step: shape mismatch");
    ++s.step;
    const auto& c = s.config;
    const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
    const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
    const auto params = p.tensors();
    const auto grads = g.tensors();
    const auto first = s.m.tensors();
    const auto second = s.v.tensors();
    const T b1 = static_cast<T>(c.beta1);
    const T b2 = static_cast<T>(c.beta2);
    const T lr = static_cast<T>(c.lr);
    const T eps = static_cast<T>(c.eps);
    const T inv_c1 = static_cast<T>(1.0 / correction1);
    const T inv_c2 = static_cast<T>(1.0 / correction2);
    for (std::size_t i = 0; i < DenoiserParams<T>::kTensorCount; ++i) {
        auto& m = *first[i];
        auto& v = *second[i];
        const auto& gi = *grads[i];
        require(gi.rows() == m.rows() && gi.cols() == m.cols(), "dimension_mismatch", "adam_step: gradient shape");
        m = b1 * m + (T(1) - b1) * gi;
        v = b2 * v + (T(1) - b2) * gi.cwiseAbs2();
        params[i]->array() -= lr * (m.array() * inv_c1) / ((v.array() * inv_c2).sqrt() + eps);
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "io_error", "cannot write checkpoint '" + path.string() + "'");
    const auto& s = ckpt.params.shape;
    binio::put_magic(out, kModelMagic);
    binio::put_u32(out, kModelVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(s.spectral_dim));
    binio::put_u32(out, static_cast<std::uint32_t>(s.hidden));
    binio::put_u32(out, static_cast<std::uint32_t>(s.time_dim));
    binio::put_u32(out, static_cast<std::uint32_t>(s.film_width));
    binio::put_u64(out, ckpt.basis_hash);
    binio::put_u64(out, ckpt.train_steps);

    auto put_tensors = [&out](const DenoiserParams<float>& p) {
        for (const auto* m : p.tensors()) {
            for (Eigen::Index i = 0; i < m->size(); ++i) binio::put_f32(out, m->data()[i]);
        }
    };
    put_tensors(ckpt.params);
    binio::put_u32(out, ckpt.adam ? 1u : 0u);
    if (ckpt.adam) {
        const auto& a = *ckpt.adam;
        binio::put_u64(out, a.step);
        binio::put_f64(out, a.config.lr);
        binio::put_f64(out, a.config.beta1);
        binio::put_f64(out, a.config.beta2);
        binio::put_f64(out, a.config.eps);
        put_tensors(a.m);
        put_tensors(a.v);
    }
    require(out.good(), "io_error", "failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "io_error", "cannot read checkpoint '" + path.string() + "'");
    binio::expect_magic(in, kModelMagic, path.string());
    const auto version = binio::get_u32(in);
    require(version == kModelVersion, "bad_artifact", "unsupported checkpoint version " + std::to_string(version));
    DenoiserShape shape;
    shape.spectral_dim = binio::get_u32(in);
    shape.hidden = binio::get_u32(in);
    shape.time_dim = binio::get_u32(in);
    shape.film_width = binio::get_u32(in);

    Checkpoint ckpt;
    ckpt.basis_hash = binio::get_u64(in);
    ckpt.train_steps = binio::get_u64(in);
    auto get_tensors = [&in](DenoiserParams<float>& p) {
        for (auto* m : p.tensors()) {
            for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = binio::get_f32(in);
        }
    };
    ckpt.params = DenoiserParams<float>::zeros(shape);
    get_tensors(ckpt.params);
    if (binio::get_u32(in) == 1u) {
        AdamState<float> a = AdamState<float>::fresh(shape);
        a.step = binio::get_u64(in);
        a.config.lr = binio::get_f64(in);
        a.config.beta1 = binio::get_f64(in);
        a.config.beta2 = binio::get_f64(in);
        a.config.eps = binio::get_f64(in);
        get_tensors(a.m);
        get_tensors(a.v);
        ckpt.adam = std::move(a);
    }
    return ckpt;
}

template struct DenoiserParams<float>;
template struct DenoiserParams<double>;
template DenoiserParams<double> DenoiserParams<float>::cast<double>() const;
template DenoiserParams<float> DenoiserParams<double>::cast<float>() const;
template DenoiserParams<float> DenoiserParams<float>::cast<float>() const;
template DenoiserParams<double> DenoiserParams<double>::cast<double>() const;
template DenoiserParams<float> init_denoiser<float>(const DenoiserShape&, std::uint64_t);
template DenoiserParams<double> init_denoiser<double>(const DenoiserShape&, std::uint64_t);
template Mat<float> time_embedding<float>(std::size_t, const Vec<float>&);
template Mat<double> time_embedding<double>(std::size_t, const Vec<double>&);
template Mat<float> denoise<float>(const DenoiserParams<float>&, const Mat<float>&, const Mat<float>&,
                                   const Vec<float>&);
template Mat<double> denoise<double>(const DenoiserParams<double>&, const Mat<double>&, const Mat<double>&,
                                     const Vec<double>&);
template float loss_and_grad<float>(const DenoiserParams<float>&, const DenoiserBatch<float>&,
                                    DenoiserParams<float>*);
template double loss_and_grad<double>(const DenoiserParams<double>&, const DenoiserBatch<double>&,
                                      DenoiserParams<double>*);
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(DenoiserParams<float>&, const DenoiserParams<float>&, AdamState<float>&);
template void adam_step<double>(DenoiserParams<double>&, const DenoiserParams<double>&, AdamState<double>&);

}  // namespace sdiff
