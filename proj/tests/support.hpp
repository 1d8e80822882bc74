#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fairdiff/fairdiff.hpp"

namespace fdtest {

/// Default world, trained diffusion model and kappa, built once per test binary.
struct Trained {
    fairdiff::Dataset ds;
    fairdiff::EpsilonModel model;
    fairdiff::ClassifierModel kappa;
    fairdiff::TrainResult train;
};

inline constexpr std::uint64_t kSeed = 7;

inline const Trained& trained() {
    static const Trained t = [] {
        Trained r;
        r.ds = fairdiff::build_world(fairdiff::default_world_spec(), kSeed);
        r.model = fairdiff::make_epsilon_model(r.ds, {}, kSeed);
        fairdiff::TrainConfig cfg;
        cfg.seed = kSeed;
        r.train = fairdiff::train_epsilon(r.model, r.ds, cfg);
        r.kappa = fairdiff::train_kappa(r.ds, kSeed, 30);
        return r;
    }();
    return t;
}

inline double kappa_rate(const fairdiff::ClassifierModel& kappa, const std::vector<fairdiff::Vector>& xs) {
    std::vector<int> labels;
    for (const auto& x : xs) labels.push_back(fairdiff::kappa_label(kappa, x));
    return fairdiff::attribute_rate(labels);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("fairdiff_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

}  // namespace fdtest
