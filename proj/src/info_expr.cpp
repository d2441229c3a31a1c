#include "coordsim/info_expr.hpp"

#include <cctype>
#include <stdexcept>

namespace coordsim {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

VarSet parse_list(const std::string& s, const std::string& whole) {
  VarSet out;
  std::size_t start = 0;
  while (true) {
    auto comma = s.find(',', start);
    std::string name = trim(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (name.empty()) throw std::invalid_argument("empty variable name in '" + whole + "'");
    for (char c : name)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '@')
        throw std::invalid_argument("bad variable name '" + name + "' in '" + whole + "'");
    out.push_back(name);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Parses "A;B|C" or "A|C" (the inside of I(...) or H(...)).
InfoTerm parse_body(const std::string& body, bool mutual, const std::string& whole) {
  InfoTerm t;
  t.mutual = mutual;
  std::string main = body, cond;
  auto bar = body.find('|');
  if (bar != std::string::npos) {
    main = body.substr(0, bar);
    cond = body.substr(bar + 1);
    t.given = parse_list(cond, whole);
  }
  auto semi = main.find(';');
  if (mutual) {
    if (semi == std::string::npos) throw std::invalid_argument("mutual information needs ';' in '" + whole + "'");
    t.a = parse_list(main.substr(0, semi), whole);
    t.b = parse_list(main.substr(semi + 1), whole);
  } else {
    if (semi != std::string::npos) throw std::invalid_argument("unexpected ';' in entropy '" + whole + "'");
    t.a = parse_list(main, whole);
  }
  return t;
}

}  // namespace

std::vector<InfoTerm> parse_info_expr(const std::string& text) {
  std::string s = trim(text);
  if (s.empty()) throw std::invalid_argument("empty information expression");
  if (s.find('(') == std::string::npos) {
    bool mutual = s.find(';') != std::string::npos;
    return {parse_body(s, mutual, text)};
  }
  std::vector<InfoTerm> out;
  std::size_t i = 0;
  auto skip = [&] {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  };
  bool first = true;
  while (true) {
    skip();
    if (i >= s.size()) break;
    double sign = 1;
    if (s[i] == '+' || s[i] == '-') {
      sign = s[i] == '-' ? -1 : 1;
      ++i;
      skip();
    } else if (!first) {
      throw std::invalid_argument("expected '+' or '-' at position " + std::to_string(i) + " in '" + text + "'");
    }
    double coeff = 1;
    if (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.')) {
      std::size_t used = 0;
      coeff = std::stod(s.substr(i), &used);
      i += used;
      skip();
      if (i >= s.size() || s[i] != '*') throw std::invalid_argument("expected '*' after coefficient in '" + text + "'");
      ++i;
      skip();
    }
    if (i + 1 >= s.size() || (s[i] != 'H' && s[i] != 'I') || s[i + 1] != '(')
      throw std::invalid_argument("expected H(...) or I(...) at position " + std::to_string(i) + " in '" + text + "'");
    bool mutual = s[i] == 'I';
    auto close = s.find(')', i);
    if (close == std::string::npos) throw std::invalid_argument("unbalanced parenthesis in '" + text + "'");
    InfoTerm t = parse_body(s.substr(i + 2, close - i - 2), mutual, text);
    t.coeff = sign * coeff;
    out.push_back(t);
    i = close + 1;
    first = false;
  }
  return out;
}

double eval_info_expr(const JointPmf& p, const std::string& text) {
  double v = 0;
  for (const auto& t : parse_info_expr(text))
    v += t.coeff * (t.mutual ? mutual_info(p, t.a, t.b, t.given) : entropy(p, t.a, t.given));
  return v;
}

}  // namespace coordsim
