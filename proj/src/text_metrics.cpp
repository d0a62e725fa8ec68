#include "docmi/text_metrics.hpp"

#include <algorithm>
#include <cctype>

#include "docmi/common.hpp"

namespace docmi {

namespace {

// Two-row dynamic program; works for any random-access sequence.
template <typename Seq>
std::size_t edit_distance(const Seq& a, const Seq& b) {
    const std::size_t n = a.size();
    const std::size_t m = b.size();
    if (n == 0) return m;
    if (m == 0) return n;

    std::vector<std::size_t> prev(m + 1);
    std::vector<std::size_t> curr(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        curr[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, sub});
        }
        std::swap(prev, curr);
    }
    return prev[m];
}

} // namespace

std::size_t levenshtein(const std::string& a, const std::string& b) {
    return edit_distance(a, b);
}

std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
    return edit_distance(a, b);
}

double normalized_levenshtein(const std::string& pred, const std::string& gold) {
    const std::size_t longest = std::max(pred.size(), gold.size());
    if (longest == 0) return 0.0;
    return static_cast<double>(levenshtein(pred, gold)) / static_cast<double>(longest);
}

double nls(const std::string& pred, const std::string& gold) {
    const double nl = normalized_levenshtein(pred, gold);
    return nl < 0.5 ? 1.0 - nl : 0.0;
}

std::string canonicalize_answer(const std::string& s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    std::string out = s.substr(begin, end - begin);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

double acc(const std::string& pred, const std::string& gold) {
    return canonicalize_answer(pred) == canonicalize_answer(gold) ? 1.0 : 0.0;
}

double utility(UtilityKind kind, const std::string& pred, const std::string& gold) {
    switch (kind) {
    case UtilityKind::kAcc: return acc(pred, gold);
    case UtilityKind::kNls: return nls(pred, gold);
    }
    throw ContractError("utility: unknown kind");
}

} // namespace docmi
