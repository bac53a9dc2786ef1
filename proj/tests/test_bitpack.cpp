#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <random>
#include <vector>

#include "kvq/bitpack.hpp"
#include "kvq/reference.hpp"

using namespace kvq;

TEST_CASE("two-bit codes pack MSB-first into one byte") {
    std::vector<std::uint32_t> codes = {3, 1, 0, 2};
    PackedBuffer buf = pack(codes, 2, 8);
    REQUIRE(buf.byte_size() == 1);
    REQUIRE(buf.word_count() == 1);
    // 11 01 00 10 reading from the most significant bit down.
    REQUIRE(buf.bytes[0] == 210);
    REQUIRE(buf.word_at(0) == 210u);
    REQUIRE(unpack(buf) == codes);
}

TEST_CASE("one-bit codes fill a byte most significant bit first") {
    std::vector<std::uint32_t> codes = {1, 0, 1, 1, 0, 0, 1, 0};
    PackedBuffer buf = pack(codes, 1, 8);
    REQUIRE(buf.byte_size() == 1);
    REQUIRE(buf.bytes[0] == 178);
    REQUIRE(unpack(buf) == codes);
}

TEST_CASE("sixteen-bit words store little-endian bytes") {
    std::vector<std::uint32_t> codes = {1, 2, 3};
    PackedBuffer buf = pack(codes, 4, 16);
    REQUIRE(buf.word_count() == 1);
    REQUIRE(buf.byte_size() == 2);
    // Word value 0x1230: nibbles 1,2,3 then a zero pad nibble.
    REQUIRE(buf.word_at(0) == 0x1230u);
    REQUIRE(buf.bytes[0] == 0x30);
    REQUIRE(buf.bytes[1] == 0x12);
    REQUIRE(unpack(buf) == codes);
}

TEST_CASE("partial final word zero-pads and never leaks pad codes") {
    std::vector<std::uint32_t> codes = {3, 3, 3, 3, 3};
    PackedBuffer buf = pack(codes, 2, 8);
    REQUIRE(buf.logical_count == 5);
    REQUIRE(buf.word_count() == 2);
    REQUIRE(buf.byte_size() == 2);
    // Second byte holds code 3 then three zero pads: 11 00 00 00.
    REQUIRE(buf.bytes[1] == 0xC0);
    REQUIRE(unpack(buf) == codes);
}

TEST_CASE("packed size follows the word-count law") {
    struct Case {
        std::size_t count;
        int n, m;
        std::size_t words;
    };
    for (Case c : {Case{17, 4, 8, 9}, Case{33, 1, 32, 2}, Case{8, 8, 8, 8},
                   Case{16, 2, 16, 2}, Case{1, 1, 8, 1}}) {
        std::vector<std::uint32_t> codes(c.count, 1u);
        PackedBuffer buf = pack(codes, c.n, c.m);
        REQUIRE(buf.word_count() == c.words);
        REQUIRE(buf.byte_size() == c.words * static_cast<std::size_t>(c.m / 8));
    }
}

TEST_CASE("empty input packs to an empty buffer") {
    PackedBuffer buf = pack(std::span<const std::uint32_t>{}, 4, 8);
    REQUIRE(buf.byte_size() == 0);
    REQUIRE(buf.word_count() == 0);
    REQUIRE(unpack(buf).empty());
}

TEST_CASE("every byte value round-trips as two-bit codes") {
    for (std::uint32_t byte = 0; byte < 256; ++byte) {
        std::vector<std::uint32_t> codes = {byte >> 6, (byte >> 4) & 3u, (byte >> 2) & 3u,
                                            byte & 3u};
        PackedBuffer buf = pack(codes, 2, 8);
        REQUIRE(buf.bytes[0] == byte);
        REQUIRE(unpack(buf) == codes);
    }
}

TEST_CASE("random code streams round-trip across every width pair") {
    std::mt19937_64 rng(42);
    for (int n : {1, 2, 4, 8}) {
        for (int m : {8, 16, 32}) {
            for (int trial = 0; trial < 8; ++trial) {
                std::uniform_int_distribution<std::size_t> len(0, 200);
                std::uniform_int_distribution<std::uint32_t> code(0, (1u << n) - 1u);
                std::vector<std::uint32_t> codes(len(rng));
                for (auto& c : codes) c = code(rng);
                PackedBuffer buf = pack(codes, n, m);
                REQUIRE(unpack(buf) == codes);
            }
        }
    }
}

TEST_CASE("packer agrees with the bit-string oracle") {
    std::mt19937_64 rng(7);
    int seeds_checked = 0;
    for (int n : {1, 2, 4, 8}) {
        for (int m : {8, 16, 32}) {
            for (int trial = 0; trial < 12; ++trial) {
                std::uniform_int_distribution<std::size_t> len(1, 100);
                std::uniform_int_distribution<std::uint32_t> code(0, (1u << n) - 1u);
                std::vector<std::uint32_t> codes(len(rng));
                for (auto& c : codes) c = code(rng);
                PackedBuffer buf = pack(codes, n, m);
                std::vector<std::uint32_t> want = oracle_pack(codes, n, m);
                REQUIRE(buf.word_count() == want.size());
                for (std::size_t i = 0; i < want.size(); ++i) {
                    REQUIRE(buf.word_at(i) == want[i]);
                }
                REQUIRE(oracle_unpack(want, n, m, codes.size()) == unpack(buf));
                ++seeds_checked;
            }
        }
    }
    REQUIRE(seeds_checked >= 100);
}

TEST_CASE("oversized codes are rejected") {
    std::vector<std::uint32_t> codes = {4};
    REQUIRE_THROWS_AS(pack(codes, 2, 8), domain_error);
    std::vector<std::uint32_t> codes1 = {2};
    REQUIRE_THROWS_AS(pack(codes1, 1, 8), domain_error);
}

TEST_CASE("invalid width combinations are rejected") {
    std::vector<std::uint32_t> codes = {1};
    REQUIRE_THROWS_AS(pack(codes, 3, 8), config_error);
    REQUIRE_THROWS_AS(pack(codes, 5, 32), config_error);
    REQUIRE_THROWS_AS(pack(codes, 1, 12), config_error);
    REQUIRE_THROWS_AS(pack(codes, 0, 8), config_error);
    REQUIRE_THROWS_AS(pack(codes, 1, 64), config_error);
}
