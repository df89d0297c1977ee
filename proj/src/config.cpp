#include "t4d/config.hpp"

#include "t4d/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>

namespace t4d {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
        return s.substr(1, s.size() - 2);
    return s;
}

std::string strip_comment(const std::string& line) {
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quote) {
            if (ch == quote) quote = 0;
        } else if (ch == '"' || ch == '\'') {
            quote = ch;
        } else if ((ch == '#' || ch == ';') && (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t')) {
            return line.substr(0, i);
        }
    }
    return line;
}

} // namespace

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

Config Config::parse(const std::string& text) {
    // Comments start with '#' or ';' at the beginning of a line or after
    // whitespace, outside quotes. They are removed before the INI parser runs.
    std::stringstream cleaned;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
        cleaned << strip_comment(line) << '\n';
    }
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(cleaned, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw InvalidArgument("config syntax error: " + e.message() + " at line " +
                              std::to_string(e.line()));
    }
    Config c;
    for (const auto& [name, node] : tree) {
        if (node.empty()) {
            c.values_[name] = unquote(trim(node.data()));
            continue;
        }
        for (const auto& [key, leaf] : node) c.values_[name + "." + key] = unquote(trim(leaf.data()));
    }
    return c;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = values_.at(key);
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw InvalidArgument("config key " + key + ": expected a number, got '" + s + "'");
}

int Config::get_int(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = values_.at(key);
    try {
        std::size_t used = 0;
        const long v = std::stol(s, &used);
        if (used == s.size() && v >= INT32_MIN && v <= INT32_MAX) return static_cast<int>(v);
    } catch (const std::exception&) {
    }
    throw InvalidArgument("config key " + key + ": expected an integer, got '" + s + "'");
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = values_.at(key);
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(s, &used);
        if (used == s.size() && s.front() != '-') return v;
    } catch (const std::exception&) {
    }
    throw InvalidArgument("config key " + key + ": expected a non-negative integer, got '" + s + "'");
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = values_.at(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw InvalidArgument("config key " + key + ": expected a boolean, got '" + s + "'");
}

void Config::require_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_)
        if (!known.count(k)) throw InvalidArgument("unknown config key '" + k + "'");
}

std::string Config::dump() const {
    std::ostringstream out;
    std::string section = "\x01";
    for (const auto& [k, v] : values_) {
        const auto dot = k.find('.');
        const std::string sec = dot == std::string::npos ? "" : k.substr(0, dot);
        const std::string name = dot == std::string::npos ? k : k.substr(dot + 1);
        if (sec != section) {
            if (!sec.empty()) out << (section == "\x01" ? "" : "\n") << '[' << sec << "]\n";
            section = sec;
        }
        out << name << " = " << v << '\n';
    }
    return out.str();
}

} // namespace t4d
