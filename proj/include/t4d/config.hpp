#pragma once

// Sectioned key/value text files used for scene specs and training configs.
// Grammar and keys are documented in docs/config-format.md.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace t4d {

class Config {
public:
    // Throws IoError when the file cannot be read, InvalidArgument on syntax errors.
    static Config load(const std::filesystem::path& path);
    static Config parse(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    // Keys are "section.name"; keys before any section header have no prefix.
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Throws InvalidArgument naming the first key not in `known`.
    void require_known(const std::set<std::string>& known) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    std::string dump() const;

private:
    std::map<std::string, std::string> values_;
};

} // namespace t4d
