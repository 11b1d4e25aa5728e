#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hetreg/random.hpp"
#include "hetreg/tensor.hpp"

namespace hetreg::synth {

// A registration pair. All image tensors use the spatial layout [S...]
// (rank 2 or 3); the displacement field is [rank, S...] in pixel units.
// Intensities are float32-representable (arrays round-trip bit-exactly
// through the on-disk format).
struct ImagePair {
    std::string id;
    int ndim = 2;
    Tensor moving, fixed;
    std::optional<Tensor> moving_mask, fixed_mask;
    std::optional<Tensor> gt_displacement;   // synthetic data only
    std::optional<Tensor> sigma;             // known noise std, synthetic only

    void validate() const;
};

enum class PhantomKind { ring, ellipse };
enum class NoiseProfile { intensity, banded };

// Phantom generation with a known smooth deformation and a known
// heteroscedastic noise law sigma(x) = sigma_min + (sigma_max - sigma_min) *
// g(I, x). The default profile g = I(x) makes brighter tissue noisier;
// "banded" splits the image into horizontal bands of alternating noise level.
struct SynthParams {
    std::vector<int64_t> shape{64, 64};
    double amplitude = 4.0;      // max displacement magnitude, px
    double smooth_scale = 8.0;   // gaussian smoothing of the random field, px
    PhantomKind kind = PhantomKind::ring;
    NoiseProfile profile = NoiseProfile::intensity;
    double sigma_min = 0.01;
    double sigma_max = 0.15;
    uint64_t seed = 0;

    void validate() const;
};

// moving = clean phantom; gt = smoothed random field scaled to the amplitude;
// fixed = warp(moving, gt) + heteroscedastic noise, clipped to [0,1].
ImagePair generate_pair(const SynthParams& params, RandomStream& rng);

// Adds independent N(0, sigma(x)^2) noise and clips to [0,1]. sigma must be
// nonnegative; zero entries add no noise (the degenerate limit).
Tensor inject_heteroscedastic_noise(const Tensor& image, const Tensor& sigma_field,
                                    RandomStream& rng);

// Crops all channels of [C, S...] identically around the centroid, padding
// with zeros where the window leaves the grid.
Tensor center_crop(const Tensor& stack, const std::vector<int64_t>& size,
                   const std::vector<int64_t>& centroid);

// Multilinear resampling under align-corners coordinates; use nearest=true for
// masks. image is [S...].
Tensor resize(const Tensor& image, const std::vector<int64_t>& target_shape,
              bool nearest = false);

struct PairRecord {
    std::string id;
    int ndim = 2;
    std::vector<int64_t> shape;
    std::string split;  // train / val / test
    bool has_masks = false, has_gt = false, has_sigma = false;
};

struct DatasetManifest {
    std::vector<PairRecord> pairs;

    std::vector<std::string> ids_for_split(const std::string& split) const;
};

// Directory layout: <dir>/manifest.json + <dir>/pairs/<id>/{moving,fixed,
// moving_mask,fixed_mask,gt_disp,sigma}.f32 with JSON sidecars.
void save_dataset(const std::vector<ImagePair>& pairs,
                  const std::vector<std::string>& splits, const std::string& dir);
DatasetManifest load_manifest(const std::string& dir);
ImagePair load_pair(const std::string& dir, const std::string& id);
std::vector<ImagePair> load_split(const std::string& dir, const std::string& split);

// Seeded shuffle then prefix split: floor(0.6 n) train, floor(0.2 n) val,
// remainder test.
std::vector<std::string> assign_splits(size_t n, uint64_t seed);

}  // namespace hetreg::synth
