#include "hetreg/array_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "hetreg/errors.hpp"

namespace hetreg {

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

std::vector<unsigned char> tensor_to_f32_bytes(const Tensor& t) {
    std::vector<unsigned char> out(static_cast<size_t>(t.size()) * sizeof(float));
    float* p = reinterpret_cast<float*>(out.data());
    for (int64_t i = 0; i < t.size(); ++i) p[i] = static_cast<float>(t[i]);
    return out;
}

Tensor f32_bytes_to_tensor(const std::vector<unsigned char>& bytes,
                           const std::vector<int64_t>& shape) {
    Tensor t(shape);
    if (bytes.size() != static_cast<size_t>(t.size()) * sizeof(float))
        throw FormatError("array byte count " + std::to_string(bytes.size()) +
                          " does not match shape " + t.shape_str());
    const float* p = reinterpret_cast<const float*>(bytes.data());
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(p[i]);
    return t;
}

std::string array_sidecar_json(const std::vector<int64_t>& shape) {
    json j;
    j["shape"] = shape;
    j["dtype"] = "float32";
    j["order"] = "C";
    return j.dump();
}

std::vector<int64_t> parse_array_sidecar(const std::string& json_text,
                                         const std::string& context) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw FormatError(context + ": bad sidecar JSON: " + e.what());
    }
    if (!j.contains("shape") || !j.contains("dtype"))
        throw FormatError(context + ": sidecar missing shape/dtype");
    if (j["dtype"].get<std::string>() != "float32")
        throw FormatError(context + ": unsupported dtype " + j["dtype"].get<std::string>());
    if (j.value("order", "C") != "C")
        throw FormatError(context + ": unsupported order");
    return j["shape"].get<std::vector<int64_t>>();
}

void save_array(const std::string& base_path, const Tensor& t) {
    const auto bytes = tensor_to_f32_bytes(t);
    {
        std::ofstream out(base_path + ".f32", std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + base_path + ".f32");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + base_path + ".f32");
    }
    std::ofstream side(base_path + ".json", std::ios::trunc);
    if (!side) throw std::runtime_error("cannot write " + base_path + ".json");
    side << array_sidecar_json(t.shape());
}

Tensor load_array(const std::string& base_path) {
    const auto shape = parse_array_sidecar(read_file(base_path + ".json"), base_path);
    const std::string raw = read_file(base_path + ".f32");
    std::vector<unsigned char> bytes(raw.begin(), raw.end());
    return f32_bytes_to_tensor(bytes, shape);
}

Tensor quantize_f32(const Tensor& t) {
    Tensor out = t;
    for (int64_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<double>(static_cast<float>(out[i]));
    return out;
}

void save_pgm(const std::string& base_path, const Tensor& image2d) {
    if (image2d.ndim() != 2) throw std::invalid_argument("save_pgm: expected a 2d image");
    double lo = image2d[0], hi = image2d[0];
    for (int64_t i = 0; i < image2d.size(); ++i) {
        lo = std::min(lo, image2d[i]);
        hi = std::max(hi, image2d[i]);
    }
    const double scale = (hi > lo) ? 255.0 / (hi - lo) : 0.0;

    std::ofstream out(base_path + ".pgm", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + base_path + ".pgm");
    out << "P5\n" << image2d.dim(1) << " " << image2d.dim(0) << "\n255\n";
    for (int64_t i = 0; i < image2d.size(); ++i) {
        const double v = (image2d[i] - lo) * scale;
        out.put(static_cast<char>(static_cast<int>(std::clamp(v, 0.0, 255.0) + 0.5)));
    }

    json j;
    j["min"] = lo;
    j["max"] = hi;
    std::ofstream side(base_path + ".json", std::ios::trunc);
    side << j.dump();
}

}  // namespace hetreg
