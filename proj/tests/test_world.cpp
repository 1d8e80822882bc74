#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fairdiff/world.hpp"

using namespace fairdiff;

namespace {

WorldSpec two_concepts(double rate_a, double rate_b, std::size_t n) {
    WorldSpec s;
    s.dim = 4;
    s.concepts = {{"a", rate_a, n}, {"b", rate_b, n}};
    return s;
}

std::string dataset_text(const Dataset& ds) {
    std::ostringstream out;
    write_dataset_csv(out, ds);
    return out.str();
}

}  // namespace

TEST(World, RateOneMeansAllPositive) {
    const Dataset ds = build_world(two_concepts(1.0, 0.0, 300), 3);
    for (const auto& s : ds.samples) EXPECT_EQ(s.attribute, s.concept_name == "a" ? 1 : 0);
}

TEST(World, SizeIsSumOfCounts) {
    EXPECT_EQ(build_world(two_concepts(0.3, 0.6, 250), 1).samples.size(), 500u);
    EXPECT_EQ(build_world(default_world_spec(), 1).samples.size(), 2000u);
}

TEST(World, HalfRateWithinBinomialBound) {
    const Dataset ds = build_world(two_concepts(0.5, 0.5, 10000), 11);
    std::size_t pos = 0;
    for (const auto& s : ds.samples)
        if (s.concept_name == "a") pos += static_cast<std::size_t>(s.attribute);
    const double rate = static_cast<double>(pos) / 10000.0;
    EXPECT_GE(rate, 0.48);
    EXPECT_LE(rate, 0.52);
}

TEST(World, PlantedRatesRecoverable) {
    const WorldSpec spec = default_world_spec();
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const Dataset ds = build_world(spec, seed);
        for (const auto& c : spec.concepts) {
            std::size_t n = 0, pos = 0;
            for (const auto& s : ds.samples)
                if (s.concept_name == c.name) {
                    ++n;
                    pos += static_cast<std::size_t>(s.attribute);
                }
            ASSERT_EQ(n, c.count);
            const double bound = 4.0 * std::sqrt(c.rate * (1.0 - c.rate) / static_cast<double>(n));
            EXPECT_LE(std::abs(static_cast<double>(pos) / static_cast<double>(n) - c.rate), bound) << c.name;
        }
    }
}

TEST(World, PrototypeIsMeanOfClusterMeans) {
    const WorldSpec spec = default_world_spec();
    const double K = 8.0;
    const double norm = std::sqrt((K - 1.0) / K);
    for (std::size_t k = 0; k < spec.concepts.size(); ++k) {
        const Vector p = concept_prototype(spec, spec.concepts[k].name);
        const Vector m0 = spec.cluster_mean(k, 0), m1 = spec.cluster_mean(k, 1);
        for (std::size_t i = 0; i < spec.dim; ++i) {
            EXPECT_NEAR(p[i], (m0[i] + m1[i]) / 2.0, 1e-15);
            // closed form: sep * (e_k - 1/K) / |e_k - 1/K|
            const double hand = 6.0 * ((i == k ? 1.0 : 0.0) - 1.0 / K) / norm;
            EXPECT_NEAR(p[i], hand, 1e-14);
        }
    }
    EXPECT_THROW(concept_prototype(spec, "nope"), LookupError);
}

TEST(World, SymmetricMeansGiveZeroPrototype) {
    // Cluster means are +-(sep/2) u around the concept direction; with the
    // concept part removed the prototype is the zero vector.
    const WorldSpec spec = default_world_spec();
    const Vector m0 = spec.cluster_mean(2, 0), m1 = spec.cluster_mean(2, 1);
    const Vector v = spec.concept_direction(2);
    for (std::size_t i = 0; i < spec.dim; ++i) EXPECT_NEAR((m0[i] - 6.0 * v[i]) + (m1[i] - 6.0 * v[i]), 0.0, 1e-15);
}

TEST(World, ClusterMeansDistinct) {
    const WorldSpec spec = default_world_spec();
    std::vector<Vector> means;
    for (std::size_t k = 0; k < spec.concepts.size(); ++k)
        for (int a : {0, 1}) means.push_back(spec.cluster_mean(k, a));
    for (std::size_t i = 0; i < means.size(); ++i)
        for (std::size_t j = i + 1; j < means.size(); ++j) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < spec.dim; ++c) d2 += (means[i][c] - means[j][c]) * (means[i][c] - means[j][c]);
            EXPECT_GE(std::sqrt(d2), 4.0 * spec.cluster_std);
        }
}

TEST(World, DeterministicBytes) {
    const WorldSpec spec = default_world_spec();
    EXPECT_EQ(dataset_text(build_world(spec, 5)), dataset_text(build_world(spec, 5)));
    EXPECT_NE(dataset_text(build_world(spec, 5)), dataset_text(build_world(spec, 6)));
}

TEST(World, CsvRoundTrip) {
    const Dataset ds = build_world(default_world_spec(), 9);
    std::istringstream in(dataset_text(ds));
    const Dataset back = read_dataset_csv(in);
    ASSERT_EQ(back.samples.size(), ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        EXPECT_EQ(back.samples[i].id, ds.samples[i].id);
        EXPECT_EQ(back.samples[i].attribute, ds.samples[i].attribute);
        EXPECT_EQ(back.samples[i].features, ds.samples[i].features);
    }
    EXPECT_EQ(back.spec.concepts.size(), 8u);
    EXPECT_EQ(dataset_text(back), dataset_text(ds));
}

TEST(World, SpecParsingAndValidation) {
    const WorldSpec s = parse_world_spec("# c\ndim=4\nsep=5\nstd=0.5\nconcept=x,0.2,10\nconcept=y,0.8,12\ngroup=g:x\n");
    EXPECT_EQ(s.dim, 4u);
    EXPECT_EQ(s.separation, 5.0);
    ASSERT_EQ(s.groups.size(), 1u);
    std::ostringstream out;
    write_world_spec(out, s);
    EXPECT_EQ(parse_world_spec(out.str()).concepts, s.concepts);

    EXPECT_THROW(parse_world_spec("dim=4\nconcept=x,1.2,10\nconcept=y,0.5,10\n"), SpecError);
    EXPECT_THROW(parse_world_spec("dim=4\nconcept=x,0.2,10\n"), SpecError);
    EXPECT_THROW(parse_world_spec("dim=4\nconcept=x,0.2,0\nconcept=y,0.5,10\n"), SpecError);
    EXPECT_THROW(parse_world_spec("dim=1\nconcept=x,0.2,3\nconcept=y,0.5,10\n"), SpecError);
    try {
        parse_world_spec("dim=4\nbogus=1\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(World, CsvErrors) {
    std::istringstream bad_header("a,b,c\n");
    EXPECT_THROW(read_dataset_csv(bad_header), ParseError);
    std::istringstream bad_attr("id,concept,attribute,x0\nq,c,2,1.0\n");
    EXPECT_THROW(read_dataset_csv(bad_attr), ParseError);
    std::istringstream empty("");
    EXPECT_THROW(read_dataset_csv(empty), InputError);
}
