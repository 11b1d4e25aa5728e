#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hetreg/autodiff.hpp"
#include "hetreg/random.hpp"

namespace hetreg::models {

// U-Net sizing shared by both estimators. Resolution levels = enc_widths.size()
// + 1 (full resolution plus one per stride-2 encoder conv); spatial dims must
// be divisible by 2^enc_widths.size().
struct BackboneSpec {
    int ndim = 2;
    std::vector<int> enc_widths{16, 32, 32, 32};
    std::vector<int> dec_widths{32, 32, 32, 16};
    int kernel = 3;
    bool skip_connections = true;
    // fixed scale on the displacement head output; lets the near-zero-init
    // head reach multi-pixel displacements within a short training budget
    double head_gain = 1.0;

    int levels() const { return static_cast<int>(enc_widths.size()) + 1; }
    int64_t downsample_factor() const { return int64_t{1} << enc_widths.size(); }
    void validate() const;
    bool operator==(const BackboneSpec&) const = default;
};

// Named f32 parameter arrays. Master weights live in single precision to match
// the checkpoint format exactly; graph computation happens in double.
struct Param {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> value;
    std::vector<float> adam_m, adam_v;  // sized on first optimizer step

    int64_t size() const { return static_cast<int64_t>(value.size()); }
};

class ParamStore {
public:
    // Returns the parameter's index; references into the store are invalidated
    // by further add() calls, so callers index instead of holding them.
    size_t add(std::string name, std::vector<int64_t> shape);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }
    size_t count() const { return params_.size(); }
    int64_t total_scalars() const;

    // Fresh double leaves (requires_grad) in registration order; index-aligned
    // with all().
    std::vector<Var> bind() const;

    // FNV-1a over the raw f32 bytes of every parameter, in order.
    uint64_t content_hash() const;

private:
    std::vector<Param> params_;
    std::map<std::string, size_t> index_;
};

struct DisplacementPosterior {
    Var mean;             // [N, ndim, S...]
    Var log_variance_z;   // [N, 1, S...]; undefined without the uncertainty head
    bool has_uncertainty() const { return log_variance_z.defined(); }
};

namespace detail {

// Convolutional encoder-decoder shared by both estimators.
struct UNet {
    BackboneSpec spec;
    int in_channels = 0;
    std::vector<std::pair<size_t, size_t>> enc;   // (weight idx, bias idx) per level
    std::vector<std::pair<size_t, size_t>> dec;

    void build(ParamStore& store, const std::string& prefix, int in_ch, RandomStream& rng);
    // Returns the full-resolution feature map [N, dec_widths.back(), S...].
    Var forward(const Var& input, const std::vector<Var>& bound) const;
};

}  // namespace detail

// q_theta: predicts the displacement mean (and optionally log sigma_z^2) from
// the concatenated moving/fixed pair.
class DisplacementEstimator {
public:
    DisplacementEstimator(BackboneSpec spec, bool with_uncertainty_head, uint64_t init_seed);

    DisplacementPosterior forward(const Var& moving, const Var& fixed,
                                  const std::vector<Var>& bound) const;

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    std::vector<Var> bind() const { return store_.bind(); }
    const BackboneSpec& spec() const { return spec_; }
    bool has_uncertainty_head() const { return with_uncertainty_; }

private:
    BackboneSpec spec_;
    bool with_uncertainty_;
    ParamStore store_;
    detail::UNet unet_;
    size_t head_w_, head_b_;
    size_t zhead_w_ = 0, zhead_b_ = 0;
};

// h_phi: predicts per-pixel log sigma_I^2 from the fixed/reconstructed pair.
class VarianceEstimator {
public:
    VarianceEstimator(BackboneSpec spec, uint64_t init_seed);

    Var forward(const Var& fixed, const Var& reconstructed,
                const std::vector<Var>& bound) const;

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    std::vector<Var> bind() const { return store_.bind(); }
    const BackboneSpec& spec() const { return spec_; }

private:
    BackboneSpec spec_;
    ParamStore store_;
    detail::UNet unet_;
    size_t head_w_, head_b_;
};

// z = mu + sigma_z * eps with independent standard-normal draws per component
// and the per-pixel sigma_z shared across components; differentiable in mu and
// log sigma_z^2 via the reparameterization.
Var sample_displacement(const DisplacementPosterior& posterior, RandomStream& rng);

// Closed-form scalar count for a backbone with the given head layout;
// asserted against the actual stores in tests.
//   conv(ci -> co): co * ci * k^ndim + co
// encoder convs chain from in_ch; decoder conv j sees (prev + skip) channels
// with the full-resolution skip being the network input itself.
int64_t parameter_count(const BackboneSpec& spec, int in_channels,
                        const std::vector<int>& head_out_channels);

}  // namespace hetreg::models
