#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hetreg/array_io.hpp"
#include "hetreg/errors.hpp"
#include "hetreg/zip_archive.hpp"
#include "test_support.hpp"

using namespace hetreg;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
    fs::path d = fs::temp_directory_path() / "hetreg_tests" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("zip round-trip") {
    const auto dir = tmp_dir("zip");
    const std::string path = (dir / "a.zip").string();
    {
        ZipWriter zip(path);
        zip.add_text("meta.json", "{\"x\":1}");
        std::vector<float> v{1.0f, -2.5f, 3.25f};
        zip.add("params/w.f32", v.data(), v.size() * sizeof(float));
        zip.finish();
    }
    ZipReader zip(path);
    CHECK(zip.has("meta.json"));
    CHECK(zip.has("params/w.f32"));
    CHECK(zip.read_text("meta.json") == "{\"x\":1}");
    auto bytes = zip.read("params/w.f32");
    REQUIRE(bytes.size() == 3 * sizeof(float));
    float back[3];
    std::memcpy(back, bytes.data(), sizeof(back));
    CHECK(back[0] == 1.0f);
    CHECK(back[1] == -2.5f);
    CHECK(back[2] == 3.25f);
    CHECK_THROWS_AS(zip.read("absent"), FormatError);
}

TEST_CASE("identical content writes identical archives") {
    const auto dir = tmp_dir("zipdet");
    const auto write = [&](const std::string& name) {
        ZipWriter zip((dir / name).string());
        zip.add_text("a.txt", "hello");
        zip.add_text("b.txt", "world");
        zip.finish();
    };
    write("1.zip");
    write("2.zip");
    CHECK(slurp(dir / "1.zip") == slurp(dir / "2.zip"));
}

TEST_CASE("corrupt data is detected with an offset") {
    const auto dir = tmp_dir("zipcrc");
    const std::string path = (dir / "c.zip").string();
    {
        ZipWriter zip(path);
        zip.add_text("payload", "0123456789");
        zip.finish();
    }
    // flip one payload byte
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(30 + 7 + 3);  // local header + name + into the data
    f.put('X');
    f.close();
    ZipReader zip(path);
    CHECK_THROWS_WITH_AS(zip.read("payload"), doctest::Contains("offset"), FormatError);
}

TEST_CASE("non-archives are rejected") {
    const auto dir = tmp_dir("zipbad");
    const std::string path = (dir / "bad.zip").string();
    std::ofstream(path) << "this is not a zip file at all, definitely not one";
    CHECK_THROWS_AS(ZipReader{path}, FormatError);
    CHECK_THROWS_AS(ZipReader{(dir / "missing.zip").string()}, FormatError);
}

TEST_CASE("array save/load round-trips bit-exactly") {
    RandomStream rng(5);
    const auto dir = tmp_dir("arr");
    Tensor t = quantize_f32(testsupport::random_tensor({3, 4, 5}, rng, -2.0, 2.0));
    save_array((dir / "t").string(), t);
    Tensor back = load_array((dir / "t").string());
    REQUIRE(back.shape() == t.shape());
    for (int64_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);
}

TEST_CASE("sidecar validation") {
    CHECK_THROWS_AS(parse_array_sidecar("{not json", "ctx"), FormatError);
    CHECK_THROWS_AS(parse_array_sidecar(R"({"shape":[2],"dtype":"float64"})", "ctx"),
                    FormatError);
    auto shape = parse_array_sidecar(R"({"shape":[2,3],"dtype":"float32","order":"C"})", "ctx");
    CHECK(shape == std::vector<int64_t>{2, 3});

    const std::vector<unsigned char> wrong(5 * sizeof(float));
    CHECK_THROWS_AS(f32_bytes_to_tensor(wrong, {2, 3}), FormatError);
}

TEST_CASE("pgm export writes the header and scale sidecar") {
    const auto dir = tmp_dir("pgm");
    Tensor img({2, 3}, {0.0, 0.5, 1.0, 0.25, 0.75, 1.0});
    save_pgm((dir / "img").string(), img);
    const std::string content = slurp(dir / "img.pgm");
    CHECK(content.substr(0, 3) == "P5\n");
    CHECK(content.find("3 2\n255\n") != std::string::npos);
    const std::string side = slurp(dir / "img.json");
    CHECK(side.find("\"min\":0.0") != std::string::npos);
    CHECK(side.find("\"max\":1.0") != std::string::npos);
}
