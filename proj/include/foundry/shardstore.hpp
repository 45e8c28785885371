#pragma once

// Tar-shard dataset format.
//
// A shard is a ustar archive whose entries are named `{key}_{field}.{ext}`.
// All entries of one sample are contiguous. Field names carry no underscore
// or dot, so the key is the entry name up to the last underscore.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "foundry/error.hpp"

namespace foundry::shardstore {

struct TarEntry {
    std::string name;
    std::string data;
    friend bool operator==(const TarEntry&, const TarEntry&) = default;
};

// Deterministic archives: mode 0644, uid/gid 0, mtime 0.
std::string write_tar(std::span<const TarEntry> entries);
// Regular files only; directories and pax headers are skipped.
std::vector<TarEntry> read_tar(std::string_view bytes);

struct SampleFile {
    std::string field;
    std::string ext;
    std::string bytes;
    friend bool operator==(const SampleFile&, const SampleFile&) = default;
};

struct SampleRecord {
    std::string key;
    std::vector<SampleFile> files;  // written in this order

    const SampleFile* find(std::string_view field) const;
    const SampleFile& at(std::string_view field) const;
    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

bool valid_field_name(std::string_view field);
bool valid_key(std::string_view key);

std::string write_shard(std::span<const SampleRecord> samples);
std::vector<SampleRecord> read_shard(std::string_view bytes);

std::string shard_id(std::uint64_t id);          // "00000042"
std::string shard_file_name(std::uint64_t id);   // "shard_00000042.tar"

struct ManifestEntry {
    std::string shard;
    std::uint64_t num_sequences = 0;
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

class ManifestError : public FormatError {
public:
    ManifestError(std::size_t line, const std::string& message)
        : FormatError("manifest line " + std::to_string(line) + ": " + message), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

void validate_manifest(std::span<const ManifestEntry> entries);
std::string write_manifest(std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> read_manifest(std::string_view text);
std::uint64_t total_sequences(std::span<const ManifestEntry> entries);

// Path-addressed byte storage. Paths are '/'-separated and relative to the
// storage root.
class Storage {
public:
    virtual ~Storage() = default;
    virtual std::string read(const std::string& path) const = 0;
    // Creates parent directories; replaces existing content atomically.
    virtual void write(const std::string& path, std::string_view bytes) = 0;
    virtual bool exists(const std::string& path) const = 0;
    // File names directly under `dir`, sorted. Missing directory -> empty.
    virtual std::vector<std::string> list(const std::string& dir) const = 0;
};

class LocalStorage : public Storage {
public:
    explicit LocalStorage(std::filesystem::path root) : root_(std::move(root)) {}

    std::string read(const std::string& path) const override;
    void write(const std::string& path, std::string_view bytes) override;
    bool exists(const std::string& path) const override;
    std::vector<std::string> list(const std::string& dir) const override;

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path resolve(const std::string& path) const;
    std::filesystem::path root_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace foundry::shardstore
