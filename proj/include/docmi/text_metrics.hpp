#pragma once

#include <string>
#include <vector>

namespace docmi {

enum class UtilityKind { kAcc, kNls };

// Minimal edit count between two sequences under unit-cost
// insert/delete/substitute.
std::size_t levenshtein(const std::string& a, const std::string& b);
std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b);

// Normalized Levenshtein distance: edit count over max length. Both empty -> 0.
double normalized_levenshtein(const std::string& pred, const std::string& gold);

// Normalized Levenshtein similarity with the DocVQA hard cutoff:
// 1 - NL when NL < 0.5, otherwise 0. Character-level over the given strings.
double nls(const std::string& pred, const std::string& gold);

// Exact match after trimming whitespace and lowercasing.
double acc(const std::string& pred, const std::string& gold);

double utility(UtilityKind kind, const std::string& pred, const std::string& gold);

std::string canonicalize_answer(const std::string& s);

} // namespace docmi
