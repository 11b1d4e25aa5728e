#include "hetreg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "hetreg/array_io.hpp"
#include "hetreg/errors.hpp"
#include "hetreg/warp.hpp"

namespace hetreg::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void ImagePair::validate() const {
    if (ndim != 2 && ndim != 3) throw std::invalid_argument("ImagePair: ndim must be 2 or 3");
    if (moving.ndim() != ndim) throw std::invalid_argument("ImagePair: moving rank mismatch");
    require_same_shape(moving, fixed, "ImagePair");
    for (int64_t i = 0; i < moving.size(); ++i) {
        if (moving[i] < 0.0 || moving[i] > 1.0 || fixed[i] < 0.0 || fixed[i] > 1.0)
            throw std::invalid_argument("ImagePair: intensities must lie in [0,1]");
    }
    for (const auto& m : {moving_mask, fixed_mask}) {
        if (!m) continue;
        require_same_shape(*m, moving, "ImagePair mask");
        for (int64_t i = 0; i < m->size(); ++i)
            if ((*m)[i] != 0.0 && (*m)[i] != 1.0)
                throw std::invalid_argument("ImagePair: masks must be {0,1}-valued");
    }
    if (gt_displacement) {
        if (gt_displacement->ndim() != ndim + 1 || gt_displacement->dim(0) != ndim)
            throw std::invalid_argument("ImagePair: gt displacement must be [ndim, S...]");
        for (int i = 0; i < ndim; ++i)
            if (gt_displacement->dim(1 + i) != moving.dim(i))
                throw std::invalid_argument("ImagePair: gt displacement shape mismatch");
        for (int64_t i = 0; i < gt_displacement->size(); ++i)
            if (!std::isfinite((*gt_displacement)[i]))
                throw std::invalid_argument("ImagePair: non-finite gt displacement");
    }
}

void SynthParams::validate() const {
    if (shape.size() != 2 && shape.size() != 3)
        throw std::invalid_argument("SynthParams: shape rank must be 2 or 3");
    for (int64_t d : shape)
        if (d < 8) throw std::invalid_argument("SynthParams: dims must be >= 8");
    if (sigma_min < 0.0 || sigma_max < sigma_min)
        throw std::invalid_argument("SynthParams: need 0 <= sigma_min <= sigma_max");
    if (amplitude < 0.0) throw std::invalid_argument("SynthParams: amplitude must be >= 0");
    if (smooth_scale <= 0.0) throw std::invalid_argument("SynthParams: smooth_scale must be > 0");
}

namespace {

// separable gaussian blur along the spatial axes of [C, S...]
void blur_spatial(Tensor& t, double sigma) {
    if (sigma <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        norm += kernel[static_cast<size_t>(i + radius)];
    }
    for (double& k : kernel) k /= norm;

    const int rank = t.ndim() - 1;
    for (int axis = 0; axis < rank; ++axis) {
        int64_t outer = t.dim(0);
        for (int i = 0; i < axis; ++i) outer *= t.dim(1 + i);
        const int64_t len = t.dim(1 + axis);
        int64_t inner = 1;
        for (int i = axis + 1; i < rank; ++i) inner *= t.dim(1 + i);
        Tensor src = t;
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t l = 0; l < len; ++l)
                for (int64_t in = 0; in < inner; ++in) {
                    double acc = 0.0;
                    for (int k = -radius; k <= radius; ++k) {
                        const int64_t ll = std::clamp<int64_t>(l + k, 0, len - 1);
                        acc += kernel[static_cast<size_t>(k + radius)] *
                               src[(o * len + ll) * inner + in];
                    }
                    t[(o * len + l) * inner + in] = acc;
                }
    }
}

double smoothstep(double e0, double e1, double x) {
    const double u = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return u * u * (3.0 - 2.0 * u);
}

// ring or ellipse phantom plus dim background blobs; mask marks the structure
void build_phantom(const SynthParams& p, RandomStream& rng, Tensor& image, Tensor& mask) {
    const int rank = static_cast<int>(p.shape.size());
    image = Tensor(p.shape);
    mask = Tensor(p.shape);
    const double min_dim = static_cast<double>(*std::min_element(p.shape.begin(), p.shape.end()));

    double center[3], axes[3];
    for (int a = 0; a < rank; ++a) {
        center[a] = 0.5 * static_cast<double>(p.shape[static_cast<size_t>(a)] - 1) +
                    rng.uniform(-0.06, 0.06) * min_dim;
        axes[a] = 1.0 + rng.uniform(-0.15, 0.15);
    }
    const double r_out = (0.30 + rng.uniform(-0.03, 0.03)) * min_dim;
    const double r_in = (p.kind == PhantomKind::ring) ? r_out * (0.55 + rng.uniform(-0.05, 0.05))
                                                      : 0.0;
    const double edge = 1.5;
    const double base_intensity = 0.55 + rng.uniform(0.0, 0.15);
    const double wobble_amp = 0.18;
    const double wobble_freq = static_cast<double>(2 + rng.bounded(3));
    const double wobble_phase = rng.uniform(0.0, 6.283185307179586);
    // radial speckle bands give the data term dense gradients to match on
    const double band_period = 5.0 + rng.uniform(0.0, 3.0);
    const double band_amp = 0.22;
    const double band_phase = rng.uniform(0.0, 6.283185307179586);

    struct Blob {
        double c[3], r, intensity;
    };
    std::vector<Blob> blobs;
    const int n_blobs = 3 + static_cast<int>(rng.bounded(3));
    for (int b = 0; b < n_blobs; ++b) {
        Blob bl{};
        for (int a = 0; a < rank; ++a)
            bl.c[a] = rng.uniform(0.1, 0.9) * static_cast<double>(p.shape[static_cast<size_t>(a)]);
        bl.r = rng.uniform(0.05, 0.14) * min_dim;
        bl.intensity = rng.uniform(0.05, 0.18);
        blobs.push_back(bl);
    }

    const int64_t total = image.size();
    for (int64_t idx = 0; idx < total; ++idx) {
        int64_t rem = idx;
        double x[3];
        for (int a = rank - 1; a >= 0; --a) {
            x[a] = static_cast<double>(rem % p.shape[static_cast<size_t>(a)]);
            rem /= p.shape[static_cast<size_t>(a)];
        }
        double rr = 0.0;
        for (int a = 0; a < rank; ++a) {
            const double d = (x[a] - center[a]) * axes[a];
            rr += d * d;
        }
        const double r = std::sqrt(rr);
        const double theta = std::atan2(x[1] - center[1], x[0] - center[0]);

        // soft annulus (or disc) with azimuthal intensity variation over a
        // near-black background, like the dark blood pool and air around tissue
        const double inside = smoothstep(r_out + edge, r_out - edge, r) *
                              ((r_in > 0.0) ? smoothstep(r_in - edge, r_in + edge, r) : 1.0);
        double v = 0.02;
        for (const Blob& bl : blobs) {
            double dd = 0.0;
            for (int a = 0; a < rank; ++a) dd += (x[a] - bl.c[a]) * (x[a] - bl.c[a]);
            v += bl.intensity * std::exp(-0.5 * dd / (bl.r * bl.r));
        }
        const double tissue =
            base_intensity + wobble_amp * std::sin(wobble_freq * theta + wobble_phase) +
            band_amp * std::sin(6.283185307179586 * r / band_period + band_phase);
        v = v * (1.0 - inside) + tissue * inside;
        image[idx] = std::clamp(v, 0.0, 1.0);
        mask[idx] = inside > 0.5 ? 1.0 : 0.0;
    }
}

Tensor smooth_displacement(const SynthParams& p, RandomStream& rng) {
    const int rank = static_cast<int>(p.shape.size());
    std::vector<int64_t> dshape{rank};
    dshape.insert(dshape.end(), p.shape.begin(), p.shape.end());
    Tensor d(dshape);
    for (int64_t i = 0; i < d.size(); ++i) d[i] = rng.normal();
    blur_spatial(d, p.smooth_scale);

    // scale so the mean displacement magnitude is amplitude/2; peaks then land
    // near the amplitude itself for a smoothed Gaussian field
    const int64_t sp = d.spatial_size(1);
    double mean_norm = 0.0;
    for (int64_t px = 0; px < sp; ++px) {
        double n2 = 0.0;
        for (int c = 0; c < rank; ++c) {
            const double v = d[c * sp + px];
            n2 += v * v;
        }
        mean_norm += std::sqrt(n2);
    }
    mean_norm /= static_cast<double>(sp);
    const double scale = (mean_norm > 0.0) ? 0.5 * p.amplitude / mean_norm : 0.0;
    for (int64_t i = 0; i < d.size(); ++i) d[i] *= scale;
    return d;
}

Tensor noise_sigma_field(const SynthParams& p, const Tensor& clean) {
    Tensor s(clean.shape());
    if (p.profile == NoiseProfile::intensity) {
        for (int64_t i = 0; i < s.size(); ++i)
            s[i] = p.sigma_min + (p.sigma_max - p.sigma_min) * clean[i];
    } else {
        // horizontal bands of alternating noise level
        const int64_t rows = clean.dim(0);
        const int64_t inner = clean.size() / rows;
        const int64_t band = std::max<int64_t>(4, rows / 4);
        for (int64_t r = 0; r < rows; ++r) {
            const double v = ((r / band) % 2 == 0) ? p.sigma_min : p.sigma_max;
            for (int64_t i = 0; i < inner; ++i) s[r * inner + i] = v;
        }
    }
    return s;
}

}  // namespace

Tensor inject_heteroscedastic_noise(const Tensor& image, const Tensor& sigma_field,
                                    RandomStream& rng) {
    require_same_shape(image, sigma_field, "inject_heteroscedastic_noise");
    Tensor out = image;
    for (int64_t i = 0; i < out.size(); ++i) {
        const double s = sigma_field[i];
        if (s < 0.0)
            throw std::invalid_argument("inject_heteroscedastic_noise: negative sigma");
        if (s > 0.0) out[i] += s * rng.normal();
        out[i] = std::clamp(out[i], 0.0, 1.0);
    }
    return out;
}

ImagePair generate_pair(const SynthParams& params, RandomStream& rng) {
    params.validate();
    const int rank = static_cast<int>(params.shape.size());

    ImagePair pair;
    pair.ndim = rank;

    Tensor image, mask;
    build_phantom(params, rng, image, mask);
    pair.moving = quantize_f32(image);
    pair.moving_mask = mask;

    Tensor gt = quantize_f32(smooth_displacement(params, rng));
    pair.gt_displacement = gt;

    Tensor fixed_clean = warp::warp_image(pair.moving, gt);
    pair.fixed_mask = warp::warp_labels(mask, gt);
    pair.sigma = quantize_f32(noise_sigma_field(params, fixed_clean));
    Tensor fixed = (params.sigma_max > 0.0)
                       ? inject_heteroscedastic_noise(fixed_clean, *pair.sigma, rng)
                       : fixed_clean;
    pair.fixed = quantize_f32(fixed);
    pair.validate();
    return pair;
}

Tensor center_crop(const Tensor& stack, const std::vector<int64_t>& size,
                   const std::vector<int64_t>& centroid) {
    const int rank = stack.ndim() - 1;
    if (static_cast<int>(size.size()) != rank || static_cast<int>(centroid.size()) != rank)
        throw std::invalid_argument("center_crop: size/centroid rank mismatch");
    int64_t start[3];
    for (int a = 0; a < rank; ++a) {
        if (size[static_cast<size_t>(a)] <= 0)
            throw std::invalid_argument("center_crop: nonpositive size");
        start[a] = centroid[static_cast<size_t>(a)] - size[static_cast<size_t>(a)] / 2;
        // the window must overlap the source grid; zeros pad the rest
        if (start[a] >= stack.dim(1 + a) || start[a] + size[static_cast<size_t>(a)] <= 0)
            throw std::invalid_argument("center_crop: window lies outside the image");
    }

    std::vector<int64_t> out_shape{stack.dim(0)};
    out_shape.insert(out_shape.end(), size.begin(), size.end());
    Tensor out(out_shape);
    const int64_t c_count = stack.dim(0);
    const int64_t out_sp = out.spatial_size(1);
    const int64_t in_sp = stack.spatial_size(1);

    for (int64_t c = 0; c < c_count; ++c) {
        for (int64_t op = 0; op < out_sp; ++op) {
            int64_t rem = op;
            int64_t src_off = 0;
            bool inside = true;
            for (int a = rank - 1; a >= 0; --a) {
                const int64_t o = rem % size[static_cast<size_t>(a)];
                rem /= size[static_cast<size_t>(a)];
                const int64_t s = start[a] + o;
                if (s < 0 || s >= stack.dim(1 + a)) {
                    inside = false;
                    break;
                }
                int64_t w = 1;
                for (int j = rank - 1; j > a; --j) w *= stack.dim(1 + j);
                src_off += s * w;
            }
            out[c * out_sp + op] = inside ? stack[c * in_sp + src_off] : 0.0;
        }
    }
    return out;
}

Tensor resize(const Tensor& image, const std::vector<int64_t>& target_shape, bool nearest) {
    const int rank = image.ndim();
    if (static_cast<int>(target_shape.size()) != rank)
        throw std::invalid_argument("resize: target rank mismatch");
    for (int64_t d : target_shape)
        if (d <= 0) throw std::invalid_argument("resize: nonpositive target dim");

    Tensor out(target_shape);
    const int corners = 1 << rank;
    for (int64_t op = 0; op < out.size(); ++op) {
        int64_t rem = op;
        double src[3];
        for (int a = rank - 1; a >= 0; --a) {
            const int64_t o = rem % target_shape[static_cast<size_t>(a)];
            rem /= target_shape[static_cast<size_t>(a)];
            const int64_t n_dst = target_shape[static_cast<size_t>(a)];
            const int64_t n_src = image.dim(a);
            // align-corners; a single output sample takes the first source point
            src[a] = (n_dst > 1) ? static_cast<double>(o) * static_cast<double>(n_src - 1) /
                                       static_cast<double>(n_dst - 1)
                                 : 0.0;
        }
        if (nearest) {
            int64_t off = 0;
            for (int a = 0; a < rank; ++a) {
                int64_t idx = static_cast<int64_t>(std::llround(src[a]));
                idx = std::clamp<int64_t>(idx, 0, image.dim(a) - 1);
                off = off * image.dim(a) + idx;
            }
            out[op] = image[off];
        } else {
            int64_t i0[3];
            double f[3];
            for (int a = 0; a < rank; ++a) {
                double fl = std::floor(src[a]);
                fl = std::min(fl, static_cast<double>(image.dim(a) - 1));
                i0[a] = static_cast<int64_t>(fl);
                f[a] = src[a] - fl;
            }
            double acc = 0.0;
            for (int m = 0; m < corners; ++m) {
                double w = 1.0;
                int64_t off = 0;
                for (int a = 0; a < rank; ++a) {
                    const int bit = (m >> a) & 1;
                    int64_t idx = std::min<int64_t>(i0[a] + bit, image.dim(a) - 1);
                    w *= bit ? f[a] : (1.0 - f[a]);
                    off = off * image.dim(a) + idx;
                }
                acc += w * image[off];
            }
            out[op] = acc;
        }
    }
    return out;
}

std::vector<std::string> DatasetManifest::ids_for_split(const std::string& split) const {
    std::vector<std::string> out;
    for (const PairRecord& r : pairs)
        if (r.split == split) out.push_back(r.id);
    return out;
}

std::vector<std::string> assign_splits(size_t n, uint64_t seed) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    RandomStream rng(seed);
    rng.shuffle(order);
    const size_t n_train = (n * 6) / 10;
    const size_t n_val = (n * 2) / 10;
    std::vector<std::string> splits(n);
    for (size_t k = 0; k < n; ++k) {
        const char* s = (k < n_train) ? "train" : (k < n_train + n_val) ? "val" : "test";
        splits[order[k]] = s;
    }
    return splits;
}

void save_dataset(const std::vector<ImagePair>& pairs,
                  const std::vector<std::string>& splits, const std::string& dir) {
    if (pairs.empty()) throw std::invalid_argument("save_dataset: empty dataset");
    if (splits.size() != pairs.size())
        throw std::invalid_argument("save_dataset: split assignment size mismatch");
    fs::create_directories(fs::path(dir) / "pairs");

    json manifest;
    manifest["version"] = 1;
    manifest["pairs"] = json::array();
    for (size_t i = 0; i < pairs.size(); ++i) {
        const ImagePair& p = pairs[i];
        p.validate();
        const fs::path pdir = fs::path(dir) / "pairs" / p.id;
        fs::create_directories(pdir);
        save_array((pdir / "moving").string(), p.moving);
        save_array((pdir / "fixed").string(), p.fixed);
        if (p.moving_mask) save_array((pdir / "moving_mask").string(), *p.moving_mask);
        if (p.fixed_mask) save_array((pdir / "fixed_mask").string(), *p.fixed_mask);
        if (p.gt_displacement) save_array((pdir / "gt_disp").string(), *p.gt_displacement);
        if (p.sigma) save_array((pdir / "sigma").string(), *p.sigma);

        json rec;
        rec["id"] = p.id;
        rec["ndim"] = p.ndim;
        rec["shape"] = p.moving.shape();
        rec["split"] = splits[i];
        rec["has_masks"] = p.moving_mask.has_value();
        rec["has_gt"] = p.gt_displacement.has_value();
        rec["has_sigma"] = p.sigma.has_value();
        manifest["pairs"].push_back(rec);
    }
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!out) throw std::runtime_error("save_dataset: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& dir) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw FormatError("load_manifest: missing " + mpath.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw FormatError("load_manifest: " + mpath.string() + ": " + e.what());
    }
    DatasetManifest m;
    for (const auto& rec : j.at("pairs")) {
        PairRecord r;
        r.id = rec.at("id").get<std::string>();
        r.ndim = rec.at("ndim").get<int>();
        r.shape = rec.at("shape").get<std::vector<int64_t>>();
        r.split = rec.at("split").get<std::string>();
        r.has_masks = rec.value("has_masks", false);
        r.has_gt = rec.value("has_gt", false);
        r.has_sigma = rec.value("has_sigma", false);
        // every referenced file must exist up front
        const fs::path pdir = fs::path(dir) / "pairs" / r.id;
        std::vector<std::string> files{"moving", "fixed"};
        if (r.has_masks) {
            files.push_back("moving_mask");
            files.push_back("fixed_mask");
        }
        if (r.has_gt) files.push_back("gt_disp");
        if (r.has_sigma) files.push_back("sigma");
        for (const std::string& f : files)
            if (!fs::exists(pdir / (f + ".f32")))
                throw FormatError("load_manifest: missing file " + (pdir / (f + ".f32")).string());
        m.pairs.push_back(std::move(r));
    }
    return m;
}

ImagePair load_pair(const std::string& dir, const std::string& id) {
    const DatasetManifest m = load_manifest(dir);
    const PairRecord* rec = nullptr;
    for (const PairRecord& r : m.pairs)
        if (r.id == id) rec = &r;
    if (!rec) throw FormatError("load_pair: id " + id + " not in manifest");

    const fs::path pdir = fs::path(dir) / "pairs" / id;
    ImagePair p;
    p.id = id;
    p.ndim = rec->ndim;
    p.moving = load_array((pdir / "moving").string());
    p.fixed = load_array((pdir / "fixed").string());
    if (!p.moving.same_shape(p.fixed) || p.moving.shape() != rec->shape)
        throw FormatError("load_pair: " + id + ": array shapes disagree with the manifest");
    if (rec->has_masks) {
        p.moving_mask = load_array((pdir / "moving_mask").string());
        p.fixed_mask = load_array((pdir / "fixed_mask").string());
    }
    if (rec->has_gt) p.gt_displacement = load_array((pdir / "gt_disp").string());
    if (rec->has_sigma) p.sigma = load_array((pdir / "sigma").string());
    p.validate();
    return p;
}

std::vector<ImagePair> load_split(const std::string& dir, const std::string& split) {
    const DatasetManifest m = load_manifest(dir);
    std::vector<ImagePair> out;
    for (const std::string& id : m.ids_for_split(split)) out.push_back(load_pair(dir, id));
    return out;
}

}  // namespace hetreg::synth
