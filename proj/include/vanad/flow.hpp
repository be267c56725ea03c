#pragma once

// Masked autoregressive flow over C-dimensional observations.
//
// Each layer maps x to z_i = (x_i - mu_i) * exp(-alpha_i), where (mu_i, alpha_i)
// come from a one-hidden-layer masked conditioner that only sees variables
// earlier than i in the layer's ordering. Orderings alternate between identity
// and reversal. The base density is N(u, I) with u fixed at construction.

#include "vanad/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <charconv>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace vanad {

enum class Conditioner { masked, dense };
enum class BaseMode { random, fixed_zero };

inline Conditioner parse_conditioner(std::string_view s) {
    if (s == "masked") return Conditioner::masked;
    if (s == "dense") return Conditioner::dense;
    throw Error("flow", "unknown conditioner '" + std::string(s) + "' (expected masked or dense)");
}
inline std::string_view to_string(Conditioner c) { return c == Conditioner::dense ? "dense" : "masked"; }

inline BaseMode parse_base_mode(std::string_view s) {
    if (s == "random") return BaseMode::random;
    if (s == "fixed_zero") return BaseMode::fixed_zero;
    throw Error("flow", "unknown base mode '" + std::string(s) + "' (expected random or fixed_zero)");
}
inline std::string_view to_string(BaseMode b) { return b == BaseMode::fixed_zero ? "fixed_zero" : "random"; }

inline constexpr double kAlphaClamp = 5.0;
inline const double kLog2Pi = std::log(2.0 * std::numbers::pi);

struct FlowConfig {
    Index channels = 1;
    Index layers = 3;
    Index hidden = 0;  // 0 selects max(2C, 8)
    std::uint64_t seed = 0;
    BaseMode base = BaseMode::random;
    Conditioner conditioner = Conditioner::masked;

    Index resolved_hidden() const { return hidden > 0 ? hidden : std::max<Index>(2 * channels, 8); }
};

struct LayerParams {
    Matrix w_in;   // Hd x C
    Vector b_in;   // Hd
    Matrix w_out;  // 2C x Hd; rows [0, C) give mu, rows [C, 2C) give alpha
    Vector b_out;  // 2C

    static LayerParams zeros(Index C, Index Hd) {
        return {Matrix::Zero(Hd, C), Vector::Zero(Hd), Matrix::Zero(2 * C, Hd), Vector::Zero(2 * C)};
    }
    Index size() const { return w_in.size() + b_in.size() + w_out.size() + b_out.size(); }
};

struct MaskedAffineLayer {
    LayerParams params;
    std::vector<Index> order;  // order[k] = variable at autoregressive position k
    std::vector<Index> rank;   // inverse permutation of order
    Matrix mask_in;            // Hd x C, 0/1
    Matrix mask_out;           // 2C x Hd, 0/1
};

/// Per-sample conditioner outputs for one layer.
struct ConditionerOutput {
    Vector hidden;     // tanh activations
    Vector mu;
    Vector alpha_raw;  // before clamping
    Vector alpha;
};

struct ForwardResult {
    Vector z;
    double logdet = 0.0;
};

class FlowModel {
public:
    FlowModel() = default;

    /// Orderings, masks and initial parameters. The output linear layer starts
    /// at zero, so a fresh flow is the identity with zero log-determinant.
    static FlowModel build(const FlowConfig& cfg) {
        if (cfg.channels < 1) throw Error("flow", "flow needs at least one variable");
        if (cfg.layers < 1) throw Error("flow", "flow needs at least one layer");
        FlowModel m;
        m.cfg_ = cfg;
        const Index C = cfg.channels;
        const Index Hd = cfg.resolved_hidden();
        std::mt19937_64 rng(mix_seed(cfg.seed));
        const double bound = 1.0 / std::sqrt(static_cast<double>(C));
        std::uniform_real_distribution<double> init(-bound, bound);

        for (Index l = 0; l < cfg.layers; ++l) {
            MaskedAffineLayer layer;
            layer.order.resize(static_cast<std::size_t>(C));
            for (Index k = 0; k < C; ++k)
                layer.order[static_cast<std::size_t>(k)] = (l % 2 == 0) ? k : C - 1 - k;
            layer.rank.resize(static_cast<std::size_t>(C));
            for (Index k = 0; k < C; ++k) layer.rank[static_cast<std::size_t>(layer.order[static_cast<std::size_t>(k)])] = k;
            build_masks(layer, C, Hd, cfg.conditioner);

            layer.params = LayerParams::zeros(C, Hd);
            for (Index h = 0; h < Hd; ++h) {
                for (Index c = 0; c < C; ++c) layer.params.w_in(h, c) = init(rng) * layer.mask_in(h, c);
                layer.params.b_in(h) = init(rng);
            }
            m.layers_.push_back(std::move(layer));
        }

        m.base_mean_ = Vector::Zero(C);
        if (cfg.base == BaseMode::random) {
            std::normal_distribution<double> normal(0.0, 1.0);
            for (Index c = 0; c < C; ++c) m.base_mean_(c) = normal(rng);
        }
        return m;
    }

    const FlowConfig& config() const { return cfg_; }
    Index channels() const { return cfg_.channels; }
    Index hidden() const { return cfg_.resolved_hidden(); }
    const std::vector<MaskedAffineLayer>& layers() const { return layers_; }
    std::vector<MaskedAffineLayer>& layers() { return layers_; }
    const Vector& base_mean() const { return base_mean_; }

    /// (mu, alpha) of `layer` evaluated at that layer's input x.
    ConditionerOutput conditioner(Index layer, const Vector& x) const {
        const auto& L = layers_[static_cast<std::size_t>(layer)];
        const Index C = channels();
        ConditionerOutput out;
        out.hidden = (L.params.w_in.cwiseProduct(L.mask_in) * x + L.params.b_in).array().tanh().matrix();
        Vector o = L.params.w_out.cwiseProduct(L.mask_out) * out.hidden + L.params.b_out;
        out.mu = o.head(C);
        out.alpha_raw = o.tail(C);
        out.alpha = out.alpha_raw.cwiseMax(-kAlphaClamp).cwiseMin(kAlphaClamp);
        return out;
    }

    ForwardResult forward(const Vector& x) const {
        check_input(x, "forward");
        ForwardResult r{x, 0.0};
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto c = conditioner(static_cast<Index>(l), r.z);
            r.z = ((r.z - c.mu).array() * (-c.alpha).array().exp()).matrix();
            r.logdet -= c.alpha.sum();
            if (!r.z.allFinite() || !std::isfinite(r.logdet))
                throw Error("flow", "non-finite output in layer " + std::to_string(l));
        }
        return r;
    }

    /// Sequential inversion; only defined for the masked conditioner.
    Vector inverse(const Vector& z) const {
        check_input(z, "inverse");
        if (cfg_.conditioner != Conditioner::masked)
            throw Error("flow", "inverse requires the masked conditioner");
        Vector y = z;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const auto& L = layers_[l];
            Vector x = Vector::Zero(channels());
            for (Index i : L.order) {
                const auto c = conditioner(static_cast<Index>(l), x);
                x(i) = y(i) * std::exp(c.alpha(i)) + c.mu(i);
            }
            if (!x.allFinite()) throw Error("flow", "non-finite output inverting layer " + std::to_string(l));
            y = std::move(x);
        }
        return y;
    }

    double log_density(const Vector& x) const {
        const auto r = forward(x);
        const double quad = (r.z - base_mean_).squaredNorm();
        return -0.5 * (quad + static_cast<double>(channels()) * kLog2Pi) + r.logdet;
    }

    // Trainable parameters in storage order: for each layer w_in, b_in, w_out,
    // b_out (Eigen column-major). The base mean is not trainable.
    Index parameter_count() const {
        Index n = 0;
        for (const auto& L : layers_) n += L.params.size();
        return n;
    }
    std::vector<double> flat_parameters() const { return flatten(params_view()); }
    void set_flat_parameters(const std::vector<double>& flat) {
        if (static_cast<Index>(flat.size()) != parameter_count())
            throw Error("flow", "parameter vector has wrong length");
        std::size_t k = 0;
        for (auto& L : layers_) unflatten_into(L.params, flat, k);
    }

    static std::vector<double> flatten(const std::vector<const LayerParams*>& ps) {
        std::vector<double> out;
        for (const auto* p : ps) {
            out.insert(out.end(), p->w_in.data(), p->w_in.data() + p->w_in.size());
            out.insert(out.end(), p->b_in.data(), p->b_in.data() + p->b_in.size());
            out.insert(out.end(), p->w_out.data(), p->w_out.data() + p->w_out.size());
            out.insert(out.end(), p->b_out.data(), p->b_out.data() + p->b_out.size());
        }
        return out;
    }

private:
    std::vector<const LayerParams*> params_view() const {
        std::vector<const LayerParams*> v;
        for (const auto& L : layers_) v.push_back(&L.params);
        return v;
    }

    static void unflatten_into(LayerParams& p, const std::vector<double>& flat, std::size_t& k) {
        auto take = [&](double* dst, Index n) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k), n, dst);
            k += static_cast<std::size_t>(n);
        };
        take(p.w_in.data(), p.w_in.size());
        take(p.b_in.data(), p.b_in.size());
        take(p.w_out.data(), p.w_out.size());
        take(p.b_out.data(), p.b_out.size());
    }

    // MADE degrees: variable at position r has degree r; hidden unit h has
    // degree h mod (C - 1). Hidden h sees inputs with degree <= its own and
    // feeds outputs with strictly greater degree.
    static void build_masks(MaskedAffineLayer& layer, Index C, Index Hd, Conditioner style) {
        layer.mask_in = Matrix::Ones(Hd, C);
        layer.mask_out = Matrix::Ones(2 * C, Hd);
        if (style == Conditioner::dense) return;
        for (Index h = 0; h < Hd; ++h) {
            const Index degree = C == 1 ? -1 : h % (C - 1);
            for (Index c = 0; c < C; ++c) {
                const Index r = layer.rank[static_cast<std::size_t>(c)];
                layer.mask_in(h, c) = r <= degree ? 1.0 : 0.0;
                const double out = r > degree ? 1.0 : 0.0;
                layer.mask_out(c, h) = out;
                layer.mask_out(C + c, h) = out;
            }
        }
    }

    void check_input(const Vector& x, const char* what) const {
        if (x.size() != channels())
            throw Error("flow", std::string(what) + " input has " + std::to_string(x.size()) +
                                    " values, flow expects " + std::to_string(channels()));
        if (!x.allFinite()) throw Error("flow", std::string(what) + " input is not finite");
    }

    FlowConfig cfg_;
    std::vector<MaskedAffineLayer> layers_;
    Vector base_mean_;

    friend FlowModel load_flow(const std::filesystem::path&);
};

inline FlowModel build_flow(const FlowConfig& cfg) { return FlowModel::build(cfg); }

/// Gradients mirror the trainable parameters layer by layer.
struct FlowGradients {
    std::vector<LayerParams> layers;

    std::vector<double> flat() const {
        std::vector<const LayerParams*> v;
        for (const auto& L : layers) v.push_back(&L);
        return FlowModel::flatten(v);
    }
};

struct LossAndGrad {
    double loss = 0.0;
    FlowGradients grad;
};

/// Mean negative log-likelihood of the rows of `batch` (B x C) and its gradient
/// with respect to every trainable parameter, by reverse-mode differentiation.
inline LossAndGrad nll_and_grad(const FlowModel& m, const Matrix& batch) {
    const Index B = batch.rows();
    const Index C = m.channels();
    if (B < 1) throw Error("flow", "empty batch");
    if (batch.cols() != C)
        throw Error("flow", "batch has " + std::to_string(batch.cols()) + " columns, flow expects " +
                                std::to_string(C));
    if (!batch.allFinite()) throw Error("flow", "batch contains non-finite values");

    const auto& layers = m.layers();
    const std::size_t N = layers.size();
    LossAndGrad out;
    for (std::size_t l = 0; l < N; ++l) out.grad.layers.push_back(LayerParams::zeros(C, m.hidden()));

    std::vector<Matrix> w_in_eff(N), w_out_eff(N);
    for (std::size_t l = 0; l < N; ++l) {
        w_in_eff[l] = layers[l].params.w_in.cwiseProduct(layers[l].mask_in);
        w_out_eff[l] = layers[l].params.w_out.cwiseProduct(layers[l].mask_out);
    }

    std::vector<Vector> inputs(N);
    std::vector<ConditionerOutput> cond(N);
    double total = 0.0;
    for (Index b = 0; b < B; ++b) {
        Vector z = batch.row(b).transpose();
        double alpha_sum = 0.0;
        for (std::size_t l = 0; l < N; ++l) {
            inputs[l] = z;
            cond[l] = m.conditioner(static_cast<Index>(l), z);
            z = ((z - cond[l].mu).array() * (-cond[l].alpha).array().exp()).matrix();
            alpha_sum += cond[l].alpha.sum();
        }
        const Vector diff = z - m.base_mean();
        total += 0.5 * (diff.squaredNorm() + static_cast<double>(C) * kLog2Pi) + alpha_sum;

        Vector g = diff;  // dL/dz of the last layer's output
        Vector z_out = z;
        for (std::size_t l = N; l-- > 0;) {
            const auto& c = cond[l];
            auto& G = out.grad.layers[l];
            const Vector e = (-c.alpha).array().exp().matrix();
            Vector dx = g.cwiseProduct(e);
            Vector g_o(2 * C);
            g_o.head(C) = -dx;
            for (Index i = 0; i < C; ++i) {
                const bool inside = c.alpha_raw(i) > -kAlphaClamp && c.alpha_raw(i) < kAlphaClamp;
                g_o(C + i) = inside ? 1.0 - g(i) * z_out(i) : 0.0;
            }
            G.w_out.noalias() += (g_o * c.hidden.transpose()).cwiseProduct(layers[l].mask_out);
            G.b_out += g_o;
            const Vector g_a =
                (w_out_eff[l].transpose() * g_o).cwiseProduct((1.0 - c.hidden.array().square()).matrix());
            G.w_in.noalias() += (g_a * inputs[l].transpose()).cwiseProduct(layers[l].mask_in);
            G.b_in += g_a;
            dx.noalias() += w_in_eff[l].transpose() * g_a;
            g = std::move(dx);
            z_out = inputs[l];
        }
    }

    const double inv_b = 1.0 / static_cast<double>(B);
    out.loss = total * inv_b;
    if (!std::isfinite(out.loss)) throw Error("flow", "non-finite loss");
    for (auto& G : out.grad.layers) {
        G.w_in *= inv_b;
        G.b_in *= inv_b;
        G.w_out *= inv_b;
        G.b_out *= inv_b;
    }
    return out;
}

struct TrainConfig {
    Index epochs = 5;
    double lr = 0.005;
    Index batch_size = 128;
    std::uint64_t seed = 0;  // minibatch shuffle
};

struct TrainingReport {
    std::vector<double> epoch_nll;  // mean NLL over each epoch's minibatches, pre-update
};

/// Adam over the flattened trainable parameters.
class Adam {
public:
    Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grad) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

/// Fits the flow to the rows of `data` (T x C). The last short batch is kept.
inline TrainingReport train(FlowModel& m, const Matrix& data, const TrainConfig& cfg) {
    const Index T = data.rows();
    if (T < 1) throw Error("flow", "no training data");
    if (cfg.batch_size < 1) throw Error("flow", "batch size must be positive");
    if (cfg.epochs < 0) throw Error("flow", "epochs must be non-negative");

    std::mt19937_64 rng(mix_seed(cfg.seed));
    std::vector<Index> idx(static_cast<std::size_t>(T));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::vector<double> params = m.flat_parameters();
    Adam opt(params.size(), cfg.lr);

    TrainingReport report;
    for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), rng);
        double sum = 0.0;
        Index step = 0;
        for (Index start = 0; start < T; start += cfg.batch_size, ++step) {
            const Index B = std::min(cfg.batch_size, T - start);
            Matrix batch(B, data.cols());
            for (Index b = 0; b < B; ++b) batch.row(b) = data.row(idx[static_cast<std::size_t>(start + b)]);
            LossAndGrad lg;
            try {
                lg = nll_and_grad(m, batch);
            } catch (const Error& e) {
                throw Error("flow", "training diverged at epoch " + std::to_string(epoch) + ", step " +
                                        std::to_string(step) + ": " + e.what());
            }
            sum += lg.loss * static_cast<double>(B);
            opt.step(params, lg.grad.flat());
            m.set_flat_parameters(params);
        }
        report.epoch_nll.push_back(sum / static_cast<double>(T));
    }
    return report;
}

// Text parameter file, one record per line, numbers printed with 17
// significant digits so a save/load round trip is bit-exact:
//
//   vanad-flow 1
//   channels <C>
//   layers <N>
//   hidden <Hd>
//   conditioner <masked|dense>
//   base <random|fixed_zero>
//   seed <u64>
//   base_mean <C values>
//   then per layer l = 0..N-1, values in row-major order:
//   layer <l>
//   w_in <Hd*C values>
//   b_in <Hd values>
//   w_out <2C*Hd values>
//   b_out <2C values>
inline void save_flow(const FlowModel& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("flow", "cannot write '" + path.string() + "'");
    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    auto row_major = [&](const char* key, const Matrix& a) {
        out << key;
        for (Index i = 0; i < a.rows(); ++i)
            for (Index j = 0; j < a.cols(); ++j) out << ' ' << num(a(i, j));
        out << '\n';
    };
    const auto& cfg = m.config();
    out << "vanad-flow 1\n"
        << "channels " << cfg.channels << "\nlayers " << cfg.layers << "\nhidden " << m.hidden()
        << "\nconditioner " << to_string(cfg.conditioner) << "\nbase " << to_string(cfg.base)
        << "\nseed " << cfg.seed << '\n';
    row_major("base_mean", m.base_mean().transpose());
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
        const auto& p = m.layers()[l].params;
        out << "layer " << l << '\n';
        row_major("w_in", p.w_in);
        row_major("b_in", p.b_in.transpose());
        row_major("w_out", p.w_out);
        row_major("b_out", p.b_out.transpose());
    }
    if (!out) throw Error("flow", "failed writing '" + path.string() + "'");
}

inline FlowModel load_flow(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("flow", "cannot open '" + path.string() + "'");
    std::string line;
    auto next = [&](std::string_view key) {
        if (!std::getline(in, line)) throw Error("flow", "truncated parameter file, expected " + std::string(key));
        std::istringstream ls(line);
        std::string k;
        ls >> k;
        if (k != key) throw Error("flow", "expected '" + std::string(key) + "', found '" + k + "'");
        std::string rest;
        std::getline(ls, rest);
        return rest;
    };
    auto values = [&](std::string_view key, Index n) {
        std::istringstream ls(next(key));
        std::vector<double> v;
        std::string tok;
        while (ls >> tok) {
            double d = 0.0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
            if (ec != std::errc{} || p != tok.data() + tok.size())
                throw Error("flow", "bad number '" + tok + "' in " + std::string(key));
            v.push_back(d);
        }
        if (static_cast<Index>(v.size()) != n)
            throw Error("flow", std::string(key) + " has " + std::to_string(v.size()) + " values, expected " +
                                    std::to_string(n));
        return v;
    };
    auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(' '));
        return s;
    };

    if (trim(next("vanad-flow")) != "1") throw Error("flow", "unsupported parameter file version");
    FlowConfig cfg;
    cfg.channels = std::stoll(next("channels"));
    cfg.layers = std::stoll(next("layers"));
    cfg.hidden = std::stoll(next("hidden"));
    cfg.conditioner = parse_conditioner(trim(next("conditioner")));
    cfg.base = parse_base_mode(trim(next("base")));
    cfg.seed = std::stoull(next("seed"));

    FlowModel m = FlowModel::build(cfg);
    const Index C = cfg.channels;
    const Index Hd = cfg.resolved_hidden();
    auto fill = [](Matrix& a, const std::vector<double>& v) {
        std::size_t k = 0;
        for (Index i = 0; i < a.rows(); ++i)
            for (Index j = 0; j < a.cols(); ++j) a(i, j) = v[k++];
    };
    {
        auto u = values("base_mean", C);
        m.base_mean_ = Eigen::Map<Vector>(u.data(), C);
    }
    for (Index l = 0; l < cfg.layers; ++l) {
        if (trim(next("layer")) != std::to_string(l)) throw Error("flow", "layer records out of order");
        auto& p = m.layers_[static_cast<std::size_t>(l)].params;
        fill(p.w_in, values("w_in", Hd * C));
        auto b_in = values("b_in", Hd);
        p.b_in = Eigen::Map<Vector>(b_in.data(), Hd);
        fill(p.w_out, values("w_out", 2 * C * Hd));
        auto b_out = values("b_out", 2 * C);
        p.b_out = Eigen::Map<Vector>(b_out.data(), 2 * C);
    }
    return m;
}

}  // namespace vanad
