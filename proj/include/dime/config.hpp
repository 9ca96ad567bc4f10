#ifndef DIME_CONFIG_HPP
#define DIME_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

#include "dime/model.hpp"

namespace dime {

// Flat dotted-key configuration: defaults < config file < command-line
// overrides. Unknown keys are rejected with a nearest-match suggestion;
// every run echoes its effective config so it can be replayed.
class Config {
public:
    enum class Type { Int, Double, Bool, String, DoubleList };

    Config();

    void set(const std::string& key, const std::string& value, bool mark_explicit = true);
    void load_file(const std::string& path);
    void save_file(const std::string& path) const;

    const std::string& get(const std::string& key) const;
    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<double> get_list(const std::string& key) const;

    bool is_explicit(const std::string& key) const;
    bool has(const std::string& key) const;
    std::vector<std::string> keys() const;  // sorted
    std::string help_text() const;

    // Keys under the given prefixes whose values differ between the two
    // configs (used for checkpoint/config mismatch reporting).
    static std::vector<std::string> differing_keys(const Config& a, const Config& b,
                                                   const std::vector<std::string>& prefixes);

private:
    struct Entry {
        std::string value;
        std::string def;
        Type type;
        std::string help;
        bool explicitly_set = false;
    };
    void validate(const std::string& key, const Entry& e, const std::string& value) const;
    std::string nearest_key(const std::string& key) const;

    std::map<std::string, Entry> entries_;
};

// Architecture-bearing prefixes compared between a checkpoint snapshot and
// a requested config.
inline const std::vector<std::string>& model_config_prefixes() {
    static const std::vector<std::string> p = {"moe.", "restorer.", "ablation.", "model."};
    return p;
}

DimeNet<float>::Config build_model_config(const Config& cfg);

}  // namespace dime

#endif
