#include "hetreg/models.hpp"

#include <cmath>

#include "hetreg/errors.hpp"

namespace hetreg::models {

void BackboneSpec::validate() const {
    if (ndim != 2 && ndim != 3) throw ConfigError("BackboneSpec: ndim must be 2 or 3");
    if (enc_widths.empty()) throw ConfigError("BackboneSpec: need at least 2 levels");
    if (dec_widths.size() != enc_widths.size())
        throw ConfigError("BackboneSpec: decoder width count must match encoder");
    for (int w : enc_widths)
        if (w <= 0) throw ConfigError("BackboneSpec: nonpositive encoder width");
    for (int w : dec_widths)
        if (w <= 0) throw ConfigError("BackboneSpec: nonpositive decoder width");
    if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("BackboneSpec: kernel must be odd");
    if (!(head_gain > 0.0)) throw ConfigError("BackboneSpec: head_gain must be > 0");
}

size_t ParamStore::add(std::string name, std::vector<int64_t> shape) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    Param p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.value.assign(static_cast<size_t>(n), 0.0f);
    index_[p.name] = params_.size();
    params_.push_back(std::move(p));
    return params_.size() - 1;
}

Param& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
    return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
    return params_[it->second];
}

int64_t ParamStore::total_scalars() const {
    int64_t n = 0;
    for (const Param& p : params_) n += p.size();
    return n;
}

std::vector<Var> ParamStore::bind() const {
    std::vector<Var> out;
    out.reserve(params_.size());
    for (const Param& p : params_) {
        Tensor t(p.shape);
        for (int64_t i = 0; i < t.size(); ++i)
            t[i] = static_cast<double>(p.value[static_cast<size_t>(i)]);
        out.push_back(Var::leaf(std::move(t), true));
    }
    return out;
}

uint64_t ParamStore::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const Param& p : params_) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
        for (size_t i = 0; i < p.value.size() * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

namespace detail {

namespace {

int64_t kernel_taps(const BackboneSpec& spec) {
    int64_t t = 1;
    for (int i = 0; i < spec.ndim; ++i) t *= spec.kernel;
    return t;
}

std::vector<int64_t> conv_weight_shape(const BackboneSpec& spec, int co, int ci) {
    std::vector<int64_t> s{co, ci};
    for (int i = 0; i < spec.ndim; ++i) s.push_back(spec.kernel);
    return s;
}

void he_init(Param& w, Param& b, int64_t fan_in, RandomStream& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (float& v : w.value) v = static_cast<float>(rng.normal(0.0, std));
    for (float& v : b.value) v = 0.0f;
}

}  // namespace

void UNet::build(ParamStore& store, const std::string& prefix, int in_ch, RandomStream& rng) {
    spec.validate();
    in_channels = in_ch;
    const int64_t taps = kernel_taps(spec);
    int ci = in_ch;
    for (size_t i = 0; i < spec.enc_widths.size(); ++i) {
        const int co = spec.enc_widths[i];
        const size_t wi = store.add(prefix + ".enc" + std::to_string(i) + ".w",
                                    conv_weight_shape(spec, co, ci));
        const size_t bi = store.add(prefix + ".enc" + std::to_string(i) + ".b", {co});
        he_init(store.all()[wi], store.all()[bi], ci * taps, rng);
        enc.emplace_back(wi, bi);
        ci = co;
    }
    const size_t L = spec.enc_widths.size();
    for (size_t j = 0; j < spec.dec_widths.size(); ++j) {
        const int prev = (j == 0) ? spec.enc_widths.back() : spec.dec_widths[j - 1];
        const int skip = spec.skip_connections
                             ? ((j + 1 < L) ? spec.enc_widths[L - 2 - j] : in_ch)
                             : 0;
        const int co = spec.dec_widths[j];
        const size_t wi = store.add(prefix + ".dec" + std::to_string(j) + ".w",
                                    conv_weight_shape(spec, co, prev + skip));
        const size_t bi = store.add(prefix + ".dec" + std::to_string(j) + ".b", {co});
        he_init(store.all()[wi], store.all()[bi], (prev + skip) * taps, rng);
        dec.emplace_back(wi, bi);
    }
}

Var UNet::forward(const Var& input, const std::vector<Var>& bound) const {
    const Tensor& iv = input.value();
    if (iv.ndim() != 2 + spec.ndim)
        throw std::invalid_argument("UNet: input rank does not match backbone ndim");
    if (iv.dim(1) != in_channels)
        throw std::invalid_argument("UNet: input channel mismatch");
    const int64_t factor = spec.downsample_factor();
    for (int i = 0; i < spec.ndim; ++i)
        if (iv.dim(2 + i) % factor != 0)
            throw ConfigError("UNet: spatial dims must be divisible by 2^" +
                              std::to_string(spec.enc_widths.size()) + ", got " +
                              iv.shape_str());

    std::vector<Var> features;  // encoder outputs, deepest last
    Var h = input;
    for (const auto& [wi, bi] : enc) {
        h = leaky_relu(conv_nd(h, bound[wi], bound[bi], 2));
        features.push_back(h);
    }
    const size_t L = enc.size();
    for (size_t j = 0; j < dec.size(); ++j) {
        h = upsample_nearest(h, 2);
        if (spec.skip_connections) {
            const Var& skip = (j + 1 < L) ? features[L - 2 - j] : input;
            h = concat_channels(h, skip);
        }
        const auto& [wi, bi] = dec[j];
        h = leaky_relu(conv_nd(h, bound[wi], bound[bi], 1));
    }
    return h;
}

}  // namespace detail

namespace {

// Final heads start near zero: displacements ~ 0 and log sigma^2 ~ 0 at
// initialization, matching the homoscedastic warm-up regime.
constexpr double kHeadInitStd = 1e-5;

void head_init(Param& w, Param& b, RandomStream& rng) {
    for (float& v : w.value) v = static_cast<float>(rng.normal(0.0, kHeadInitStd));
    for (float& v : b.value) v = 0.0f;
}

std::vector<int64_t> head_weight_shape(const BackboneSpec& spec, int co, int ci) {
    std::vector<int64_t> s{co, ci};
    for (int i = 0; i < spec.ndim; ++i) s.push_back(spec.kernel);
    return s;
}

}  // namespace

DisplacementEstimator::DisplacementEstimator(BackboneSpec spec, bool with_uncertainty_head,
                                             uint64_t init_seed)
    : spec_(spec), with_uncertainty_(with_uncertainty_head) {
    RandomStream rng(init_seed);
    unet_.spec = spec_;
    unet_.build(store_, "disp", 2, rng);
    const int ci = spec_.dec_widths.back();
    head_w_ = store_.add("disp.head.w", head_weight_shape(spec_, spec_.ndim, ci));
    head_b_ = store_.add("disp.head.b", {spec_.ndim});
    head_init(store_.all()[head_w_], store_.all()[head_b_], rng);
    if (with_uncertainty_) {
        zhead_w_ = store_.add("disp.zhead.w", head_weight_shape(spec_, 1, ci));
        zhead_b_ = store_.add("disp.zhead.b", {1});
        head_init(store_.all()[zhead_w_], store_.all()[zhead_b_], rng);
    }
}

DisplacementPosterior DisplacementEstimator::forward(const Var& moving, const Var& fixed,
                                                     const std::vector<Var>& bound) const {
    require_same_shape(moving.value(), fixed.value(), "DisplacementEstimator");
    Var features = unet_.forward(concat_channels(moving, fixed), bound);
    DisplacementPosterior post;
    post.mean = mul_scalar(conv_nd(features, bound[head_w_], bound[head_b_], 1),
                           spec_.head_gain);
    if (with_uncertainty_)
        post.log_variance_z = conv_nd(features, bound[zhead_w_], bound[zhead_b_], 1);
    return post;
}

VarianceEstimator::VarianceEstimator(BackboneSpec spec, uint64_t init_seed) : spec_(spec) {
    RandomStream rng(init_seed);
    unet_.spec = spec_;
    unet_.build(store_, "var", 2, rng);
    const int ci = spec_.dec_widths.back();
    head_w_ = store_.add("var.head.w", head_weight_shape(spec_, 1, ci));
    head_b_ = store_.add("var.head.b", {1});
    head_init(store_.all()[head_w_], store_.all()[head_b_], rng);
}

Var VarianceEstimator::forward(const Var& fixed, const Var& reconstructed,
                               const std::vector<Var>& bound) const {
    require_same_shape(fixed.value(), reconstructed.value(), "VarianceEstimator");
    Var features = unet_.forward(concat_channels(fixed, reconstructed), bound);
    return conv_nd(features, bound[head_w_], bound[head_b_], 1);
}

Var sample_displacement(const DisplacementPosterior& posterior, RandomStream& rng) {
    if (!posterior.has_uncertainty())
        throw std::logic_error("sample_displacement: posterior has no uncertainty head");
    const Tensor& mv = posterior.mean.value();
    const int64_t comp = mv.dim(1);

    Tensor eps(mv.shape());
    for (int64_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();

    Var sigma = exp_v(mul_scalar(posterior.log_variance_z, 0.5));
    Var sigma_rep = sigma;
    for (int64_t c = 1; c < comp; ++c) sigma_rep = concat_channels(sigma_rep, sigma);
    return add(posterior.mean, mul(sigma_rep, Var::leaf(std::move(eps))));
}

int64_t parameter_count(const BackboneSpec& spec, int in_channels,
                        const std::vector<int>& head_out_channels) {
    spec.validate();
    int64_t taps = 1;
    for (int i = 0; i < spec.ndim; ++i) taps *= spec.kernel;
    int64_t n = 0;
    int ci = in_channels;
    for (int co : spec.enc_widths) {
        n += static_cast<int64_t>(co) * ci * taps + co;
        ci = co;
    }
    const size_t L = spec.enc_widths.size();
    for (size_t j = 0; j < spec.dec_widths.size(); ++j) {
        const int prev = (j == 0) ? spec.enc_widths.back() : spec.dec_widths[j - 1];
        const int skip = spec.skip_connections
                             ? ((j + 1 < L) ? spec.enc_widths[L - 2 - j] : in_channels)
                             : 0;
        const int co = spec.dec_widths[j];
        n += static_cast<int64_t>(co) * (prev + skip) * taps + co;
    }
    for (int ho : head_out_channels)
        n += static_cast<int64_t>(ho) * spec.dec_widths.back() * taps + ho;
    return n;
}

}  // namespace hetreg::models
