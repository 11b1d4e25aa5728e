#include "hetreg/zip_archive.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "hetreg/errors.hpp"

namespace hetreg {

namespace {

constexpr uint32_t kLocalSig = 0x04034b50;
constexpr uint32_t kCentralSig = 0x02014b50;
constexpr uint32_t kEndSig = 0x06054b50;
// 1980-01-01 00:00 in DOS date/time
constexpr uint16_t kDosTime = 0;
constexpr uint16_t kDosDate = 0x0021;

void put16(std::vector<unsigned char>& b, uint16_t v) {
    b.push_back(static_cast<unsigned char>(v & 0xff));
    b.push_back(static_cast<unsigned char>(v >> 8));
}

void put32(std::vector<unsigned char>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

uint16_t get16(const std::vector<unsigned char>& b, size_t off) {
    return static_cast<uint16_t>(b[off] | (b[off + 1] << 8));
}

uint32_t get32(const std::vector<unsigned char>& b, size_t off) {
    return static_cast<uint32_t>(b[off]) | (static_cast<uint32_t>(b[off + 1]) << 8) |
           (static_cast<uint32_t>(b[off + 2]) << 16) |
           (static_cast<uint32_t>(b[off + 3]) << 24);
}

}  // namespace

ZipWriter::ZipWriter(std::string path) : path_(std::move(path)) {}

ZipWriter::~ZipWriter() {
    if (!finished_) finish();
}

void ZipWriter::add(const std::string& name, const void* data, size_t size) {
    if (finished_) throw std::logic_error("ZipWriter: add after finish");
    Entry e;
    e.name = name;
    e.size = static_cast<uint32_t>(size);
    e.crc = static_cast<uint32_t>(
        crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(size)));
    e.offset = static_cast<uint32_t>(buf_.size());

    put32(buf_, kLocalSig);
    put16(buf_, 20);            // version needed
    put16(buf_, 0);             // flags
    put16(buf_, 0);             // method: store
    put16(buf_, kDosTime);
    put16(buf_, kDosDate);
    put32(buf_, e.crc);
    put32(buf_, e.size);
    put32(buf_, e.size);
    put16(buf_, static_cast<uint16_t>(name.size()));
    put16(buf_, 0);             // extra
    buf_.insert(buf_.end(), name.begin(), name.end());
    const auto* p = static_cast<const unsigned char*>(data);
    buf_.insert(buf_.end(), p, p + size);
    entries_.push_back(std::move(e));
}

void ZipWriter::add_text(const std::string& name, const std::string& text) {
    add(name, text.data(), text.size());
}

void ZipWriter::finish() {
    if (finished_) return;
    finished_ = true;
    const uint32_t central_start = static_cast<uint32_t>(buf_.size());
    for (const Entry& e : entries_) {
        put32(buf_, kCentralSig);
        put16(buf_, 20);  // version made by
        put16(buf_, 20);  // version needed
        put16(buf_, 0);
        put16(buf_, 0);
        put16(buf_, kDosTime);
        put16(buf_, kDosDate);
        put32(buf_, e.crc);
        put32(buf_, e.size);
        put32(buf_, e.size);
        put16(buf_, static_cast<uint16_t>(e.name.size()));
        put16(buf_, 0);
        put16(buf_, 0);
        put16(buf_, 0);  // disk number
        put16(buf_, 0);  // internal attrs
        put32(buf_, 0);  // external attrs
        put32(buf_, e.offset);
        buf_.insert(buf_.end(), e.name.begin(), e.name.end());
    }
    const uint32_t central_size = static_cast<uint32_t>(buf_.size()) - central_start;
    put32(buf_, kEndSig);
    put16(buf_, 0);
    put16(buf_, 0);
    put16(buf_, static_cast<uint16_t>(entries_.size()));
    put16(buf_, static_cast<uint16_t>(entries_.size()));
    put32(buf_, central_size);
    put32(buf_, central_start);
    put16(buf_, 0);

    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("ZipWriter: cannot open " + path_ + " for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()),
              static_cast<std::streamsize>(buf_.size()));
    if (!out) throw std::runtime_error("ZipWriter: write failed for " + path_);
}

ZipReader::ZipReader(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw FormatError("ZipReader: cannot open " + path_);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());

    if (buf_.size() < 22) throw FormatError("ZipReader: " + path_ + " too small for an archive");
    // locate end-of-central-directory record (no comment expected, but scan)
    size_t eocd = buf_.size();
    bool found = false;
    for (size_t i = buf_.size() - 22 + 1; i-- > 0;) {
        if (get32(buf_, i) == kEndSig) {
            eocd = i;
            found = true;
            break;
        }
        if (buf_.size() - i > 22 + 65535) break;
    }
    if (!found) throw FormatError("ZipReader: " + path_ + ": end record not found");

    const uint16_t count = get16(buf_, eocd + 10);
    uint32_t off = get32(buf_, eocd + 16);
    for (uint16_t k = 0; k < count; ++k) {
        if (off + 46 > buf_.size() || get32(buf_, off) != kCentralSig)
            throw FormatError("ZipReader: " + path_ + ": bad central entry at offset " +
                              std::to_string(off));
        const uint16_t method = get16(buf_, off + 10);
        if (method != 0)
            throw FormatError("ZipReader: " + path_ + ": unsupported compression method");
        Entry e;
        e.crc = get32(buf_, off + 16);
        e.size = get32(buf_, off + 20);
        const uint16_t nlen = get16(buf_, off + 28);
        const uint16_t xlen = get16(buf_, off + 30);
        const uint16_t clen = get16(buf_, off + 32);
        e.offset = get32(buf_, off + 42);
        std::string name(reinterpret_cast<const char*>(buf_.data()) + off + 46, nlen);
        entries_[name] = e;
        off += 46 + nlen + xlen + clen;
    }
}

std::vector<std::string> ZipReader::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

std::vector<unsigned char> ZipReader::read(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw FormatError("ZipReader: " + path_ + ": missing entry " + name);
    const Entry& e = it->second;
    if (e.offset + 30 > buf_.size() || get32(buf_, e.offset) != kLocalSig)
        throw FormatError("ZipReader: " + path_ + ": bad local header at offset " +
                          std::to_string(e.offset));
    const uint16_t nlen = get16(buf_, e.offset + 26);
    const uint16_t xlen = get16(buf_, e.offset + 28);
    const size_t data_off = e.offset + 30 + nlen + xlen;
    if (data_off + e.size > buf_.size())
        throw FormatError("ZipReader: " + path_ + ": truncated data for " + name +
                          " at offset " + std::to_string(data_off));
    std::vector<unsigned char> data(buf_.begin() + static_cast<long>(data_off),
                                    buf_.begin() + static_cast<long>(data_off + e.size));
    const uint32_t crc =
        static_cast<uint32_t>(crc32(0L, data.data(), static_cast<uInt>(data.size())));
    if (crc != e.crc)
        throw FormatError("ZipReader: " + path_ + ": CRC mismatch for " + name +
                          " at offset " + std::to_string(data_off));
    return data;
}

std::string ZipReader::read_text(const std::string& name) const {
    auto data = read(name);
    return std::string(data.begin(), data.end());
}

}  // namespace hetreg
