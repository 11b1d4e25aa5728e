#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace hetreg {

// Minimal ZIP container (store method only, CRC-32 checked). Checkpoints are
// written through this so any standard zip tool can open them. Timestamps are
// fixed so identical contents produce byte-identical archives.

class ZipWriter {
public:
    explicit ZipWriter(std::string path);
    ~ZipWriter();
    ZipWriter(const ZipWriter&) = delete;
    ZipWriter& operator=(const ZipWriter&) = delete;

    void add(const std::string& name, const void* data, size_t size);
    void add_text(const std::string& name, const std::string& text);
    void finish();

private:
    struct Entry {
        std::string name;
        uint32_t crc, size, offset;
    };
    std::string path_;
    std::vector<unsigned char> buf_;
    std::vector<Entry> entries_;
    bool finished_ = false;
};

class ZipReader {
public:
    explicit ZipReader(std::string path);

    std::vector<std::string> names() const;
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    std::vector<unsigned char> read(const std::string& name) const;
    std::string read_text(const std::string& name) const;

private:
    struct Entry {
        uint32_t offset, size, crc;
    };
    std::string path_;
    std::vector<unsigned char> buf_;
    std::map<std::string, Entry> entries_;
};

}  // namespace hetreg
