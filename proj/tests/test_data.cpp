#include <doctest.h>

#include <map>
#include <set>

#include "qal/data.hpp"
#include "qal/errors.hpp"
#include "test_util.hpp"

using namespace qal;

TEST_CASE("gen_synthetic basics") {
    SUBCASE("zero noise collapses each class onto its prototype") {
        Dataset d = gen_synthetic(3, 4, 8, 2, 0.0, 1);
        const size_t sample = static_cast<size_t>(d.channels()) * d.height() * d.width();
        for (int i = 3; i < d.size(); ++i) {
            const int ref = d.labels[static_cast<size_t>(i)];  // first sample of the class
            for (size_t p = 0; p < sample; ++p) {
                CHECK(d.images.data()[i * sample + p] == d.images.data()[ref * sample + p]);
            }
        }
    }
    SUBCASE("same seed gives identical tensors") {
        Dataset a = gen_synthetic(4, 5, 16, 3, 0.15, 9);
        Dataset b = gen_synthetic(4, 5, 16, 3, 0.15, 9);
        REQUIRE(a.images.size() == b.images.size());
        for (size_t i = 0; i < a.images.size(); ++i) {
            CHECK(a.images.data()[i] == b.images.data()[i]);
        }
    }
    SUBCASE("pixels stay in [0,1]") {
        Dataset d = gen_synthetic(2, 10, 8, 1, 0.5, 2);
        for (size_t i = 0; i < d.images.size(); ++i) {
            CHECK(d.images.data()[i] >= 0.0);
            CHECK(d.images.data()[i] <= 1.0);
        }
    }
    SUBCASE("preconditions") {
        CHECK_THROWS_AS(gen_synthetic(1, 4, 8, 1, 0.1, 1), ContractError);
        CHECK_THROWS_AS(gen_synthetic(2, 4, 4, 1, 0.1, 1), ContractError);
    }
}

namespace {

std::vector<uint8_t> make_record(uint8_t label, uint8_t fill) {
    std::vector<uint8_t> rec(3073, fill);
    rec[0] = label;
    return rec;
}

}  // namespace

TEST_CASE("cifar10 parser") {
    SUBCASE("single all-255 record") {
        Dataset d = parse_cifar10_binary(make_record(3, 255));
        REQUIRE(d.size() == 1);
        CHECK(d.labels[0] == 3);
        CHECK(d.num_classes == 10);
        REQUIRE(d.images.shape() == Shape{1, 3, 32, 32});
        for (size_t i = 0; i < d.images.size(); ++i) CHECK(d.images.data()[i] == 1.0);
    }
    SUBCASE("empty input gives empty dataset") {
        Dataset d = parse_cifar10_binary({});
        CHECK(d.size() == 0);
    }
    SUBCASE("truncated record reports offset 0") {
        std::vector<uint8_t> bytes(3072, 0);
        CHECK_THROWS_WITH_AS(parse_cifar10_binary(bytes), doctest::Contains("offset 0"),
                             FormatError);
    }
    SUBCASE("bad label byte reports the record index") {
        std::vector<uint8_t> bytes = make_record(1, 0);
        const std::vector<uint8_t> bad = make_record(11, 0);
        bytes.insert(bytes.end(), bad.begin(), bad.end());
        CHECK_THROWS_WITH_AS(parse_cifar10_binary(bytes), doctest::Contains("record 1"),
                             FormatError);
    }
    SUBCASE("three-record fixture parses to exact pixel values") {
        std::vector<uint8_t> bytes;
        for (uint8_t r = 0; r < 3; ++r) {
            std::vector<uint8_t> rec(3073);
            rec[0] = static_cast<uint8_t>(r * 4);
            for (size_t p = 0; p < 3072; ++p) rec[1 + p] = static_cast<uint8_t>((p + r) % 256);
            bytes.insert(bytes.end(), rec.begin(), rec.end());
        }
        Dataset d = parse_cifar10_binary(bytes);
        REQUIRE(d.size() == 3);
        for (int r = 0; r < 3; ++r) {
            CHECK(d.labels[static_cast<size_t>(r)] == r * 4);
            for (size_t p = 0; p < 3072; ++p) {
                const double want = ((p + static_cast<size_t>(r)) % 256) / 255.0;
                CHECK(d.images.data()[static_cast<size_t>(r) * 3072 + p] == want);
            }
        }
    }
    SUBCASE("parse -> serialize -> parse is bit-exact on pixel bytes") {
        Rng rng(77);
        std::vector<uint8_t> bytes;
        for (int r = 0; r < 5; ++r) {
            std::vector<uint8_t> rec(3073);
            rec[0] = static_cast<uint8_t>(rng.uniform_int(10));
            for (size_t p = 1; p < rec.size(); ++p) {
                rec[p] = static_cast<uint8_t>(rng.uniform_int(256));
            }
            bytes.insert(bytes.end(), rec.begin(), rec.end());
        }
        const std::vector<uint8_t> round = serialize_cifar10_binary(parse_cifar10_binary(bytes));
        CHECK(round == bytes);
    }
}

TEST_CASE("stratified split") {
    Dataset d = gen_synthetic(2, 5, 8, 1, 0.1, 4);  // 10 samples, 5 per class
    SUBCASE("balanced halves") {
        auto [train, test] = split(d, 0.5, 3);
        CHECK(train.size() == 5);
        CHECK(test.size() == 5);
        std::map<int, int> counts;
        for (int l : test.labels) counts[l]++;
        CHECK(counts[0] >= 2);
        CHECK(counts[1] >= 2);
    }
    SUBCASE("union preserves every sample exactly once") {
        auto [train, test] = split(d, 0.3, 3);
        CHECK(train.size() + test.size() == d.size());
        // Noisy samples are unique, so first-pixel values stand in for ids.
        std::multiset<double> orig, got;
        const size_t sample = static_cast<size_t>(d.channels()) * d.height() * d.width();
        for (int i = 0; i < d.size(); ++i) orig.insert(d.images.data()[i * sample]);
        for (int i = 0; i < train.size(); ++i) got.insert(train.images.data()[i * sample]);
        for (int i = 0; i < test.size(); ++i) got.insert(test.images.data()[i * sample]);
        CHECK(orig == got);
    }
    SUBCASE("same seed gives identical split") {
        auto [a_train, a_test] = split(d, 0.4, 9);
        auto [b_train, b_test] = split(d, 0.4, 9);
        CHECK(a_train.labels == b_train.labels);
        for (size_t i = 0; i < a_train.images.size(); ++i) {
            CHECK(a_train.images.data()[i] == b_train.images.data()[i]);
        }
    }
    SUBCASE("emptying a class is an error") {
        Dataset tiny = gen_synthetic(2, 2, 8, 1, 0.1, 5);
        CHECK_THROWS_AS(split(tiny, 0.1, 1), ContractError);
    }
    SUBCASE("fraction bounds") {
        CHECK_THROWS_AS(split(d, 0.0, 1), ContractError);
        CHECK_THROWS_AS(split(d, 1.0, 1), ContractError);
    }
}
