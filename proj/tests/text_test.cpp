#include <gtest/gtest.h>

#include "convqa/text.hpp"

using namespace convqa::text;

TEST(Text, CodepointLengthCountsMultibyteOnce) {
  EXPECT_EQ(codepoint_length("abc"), 3u);
  EXPECT_EQ(codepoint_length("Björk"), 5u);
  EXPECT_EQ(codepoint_length("Pelé ≈"), 6u);
  EXPECT_EQ(codepoint_length(""), 0u);
}

TEST(Text, ByteOffsetRoundTrips) {
  std::string s = "Björk sang";
  EXPECT_EQ(byte_offset(s, 0), 0u);
  EXPECT_EQ(byte_offset(s, 3), 4u);  // ö is two bytes
  EXPECT_EQ(byte_offset(s, codepoint_length(s)), s.size());
  EXPECT_FALSE(byte_offset(s, 11).has_value());
  for (std::size_t cp = 0; cp <= codepoint_length(s); ++cp) EXPECT_EQ(codepoint_offset(s, *byte_offset(s, cp)), cp);
}

TEST(Text, CodepointSlice) {
  std::string s = "the Galápagos Islands";
  EXPECT_EQ(cp_slice(s, 4, 13), "Galápagos");
  EXPECT_FALSE(cp_slice(s, 5, 4).has_value());
  EXPECT_FALSE(cp_slice(s, 0, 100).has_value());
  EXPECT_EQ(cp_slice(s, 3, 3), "");
}

TEST(Text, WhitespaceHelpers) {
  EXPECT_EQ(squash_whitespace("  a \t b\n\nc  "), "a b c");
  EXPECT_EQ(split_whitespace(" x  y\tz "), (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_TRUE(split_whitespace("   ").empty());
  EXPECT_EQ(trim("\n CANNOTANSWER \t"), "CANNOTANSWER");
}
