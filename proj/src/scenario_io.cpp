#include "cnoma/scenario_io.hpp"

#include <fstream>
#include <sstream>

namespace cnoma {

using nlohmann::json;

FileLibrary library_from_json(const json& j) {
    if (j.contains("thresholds")) {
        FileLibrary lib;
        lib.thresholds = j.at("thresholds").get<std::vector<double>>();
        lib.validate();
        return lib;
    }
    auto lib = FileLibrary::evenly_spaced(j.at("count").get<std::size_t>(), j.at("first").get<double>(),
                                          j.at("step").get<double>());
    lib.validate();
    return lib;
}

json library_to_json(const FileLibrary& lib) { return json{{"thresholds", lib.thresholds}}; }

json scenario_to_json(const SystemScenario& s) {
    json users = json::array();
    for (const auto& u : s.users) {
        json ju{{"lambda", u.lambda},         {"distance", u.distance}, {"pathloss_exp", u.pathloss_exp},
                {"gain_shape", u.gain_shape}, {"cache", u.cache},       {"request", u.request}};
        if (u.cache_capacity != std::numeric_limits<std::size_t>::max()) {
            ju["cache_capacity"] = u.cache_capacity;
        }
        users.push_back(std::move(ju));
    }
    return json{{"users", std::move(users)},
                {"library", library_to_json(s.library)},
                {"p_max", s.p_max},
                {"noise_power", s.noise_power},
                {"rng_seed", s.rng_seed}};
}

SystemScenario scenario_from_json(const json& j) {
    SystemScenario s;
    s.library = library_from_json(j.at("library"));
    s.p_max = j.value("p_max", 1.0);
    s.noise_power = j.value("noise_power", 1.0);
    s.rng_seed = j.value("rng_seed", std::uint64_t{0});
    for (const auto& ju : j.at("users")) {
        UserProfile u;
        if (ju.contains("mean_gain")) {
            u.lambda = 1.0 / ju.at("mean_gain").get<double>();
        } else {
            u.lambda = ju.value("lambda", 1.0);
        }
        u.distance = ju.value("distance", 1.0);
        u.pathloss_exp = ju.value("pathloss_exp", 2.0);
        u.gain_shape = ju.value("gain_shape", 1.0);
        u.cache = ju.value("cache", std::vector<FileIndex>{});
        if (ju.contains("cache_capacity")) {
            u.cache_capacity = ju.at("cache_capacity").get<std::size_t>();
        }
        u.request = ju.at("request").get<FileIndex>();
        s.users.push_back(std::move(u));
    }
    s.validate();
    return s;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

SystemScenario load_scenario(const std::filesystem::path& path) {
    try {
        return scenario_from_json(read_json_file(path));
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void save_scenario(const SystemScenario& scenario, const std::filesystem::path& path) {
    write_text_file(path, scenario_to_json(scenario).dump(2) + "\n");
}

} // namespace cnoma
