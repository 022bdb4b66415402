#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "graphrom/dataset.hpp"
#include "graphrom/errors.hpp"

namespace graphrom {

/// Flat key=value configuration. Every key must be declared with a default
/// before loading; unknown keys in a file or override are hard errors so that
/// typos never pass silently. Lines starting with '#' are comments.
class Config {
public:
    void declare(const std::string& key, const std::string& default_value) {
        values_[key] = default_value;
    }

    void load_file(const std::filesystem::path& path) {
        std::istringstream in(io_detail::read_file(path));
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                                  ": expected key = value");
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    void set(const std::string& key, const std::string& value) {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown configuration key: " + key);
        it->second = value;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("undeclared configuration key: " + key);
        return it->second;
    }

    double get_double(const std::string& key) const {
        const std::string s = get_string(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key " + key + ": expected a number, got '" + s + "'");
        }
    }

    int get_int(const std::string& key) const {
        const double v = get_double(key);
        const int i = static_cast<int>(v);
        if (static_cast<double>(i) != v) throw ConfigError("key " + key + ": expected an integer");
        return i;
    }

    std::vector<double> get_double_list(const std::string& key) const {
        const std::string s = get_string(key);
        std::vector<double> out;
        std::istringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            try {
                out.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw ConfigError("key " + key + ": bad list element '" + item + "'");
            }
        }
        if (out.empty()) throw ConfigError("key " + key + ": empty list");
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

} // namespace graphrom
