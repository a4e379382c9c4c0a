// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "wfc/cli.hpp"
#include "wfc/errors.hpp"
#include "wfc/eval.hpp"
#include "wfc/quark.hpp"
#include "wfc/scorer.hpp"
#include "wfc/vocabulary.hpp"

namespace py = pybind11;

namespace {

py::tuple run(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"wfc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = wfc::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

double kl(const std::vector<double>& p, const std::vector<double>& q, double floor) {
  if (p.size() != q.size()) throw py::value_error("distributions differ in size");
  return wfc::kl_term(wfc::TokenDistribution{p}, wfc::TokenDistribution{q}, floor);
}

wfc::PromptKind prompt_kind(const std::string& kind) {
  if (kind == "generation") return wfc::PromptKind::generation;
  if (kind == "evaluation") return wfc::PromptKind::evaluation;
  throw py::value_error("prompt kind must be 'generation' or 'evaluation'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the wfcomply C++ core.";

  auto error = py::register_exception<wfc::Error>(m, "Error");
  py::register_exception<wfc::InputError>(m, "InputError", error);

  m.def("run_cli", &run, py::arg("args"), "Runs the wfc tool; returns (exit_code, stdout, stderr).");

  m.def("pairwise_loss_from_gap", &wfc::pairwise_loss_from_gap, py::arg("gap"));
  m.def("quantize_rewards", [](const std::vector<double>& r, int k) { return wfc::quantize_rewards(r, k); },
        py::arg("rewards"), py::arg("num_quantiles") = 5);
  m.def("kl_term", &kl, py::arg("p"), py::arg("q"), py::arg("floor") = 0.0);

  m.def("dist_n", [](const std::vector<std::string>& u, int n) { return wfc::dist_n(std::span<const std::string>(u), n); },
        py::arg("utterances"), py::arg("n") = 3);
  m.def("workflow_accuracy",
        [](const std::vector<std::optional<std::string>>& p, const std::vector<std::string>& g) {
          return wfc::workflow_accuracy(p, g);
        },
        py::arg("predicted"), py::arg("gold"));
  m.def("token_f1", &wfc::token_f1, py::arg("pred"), py::arg("target"));
  m.def("sentence_bleu", &wfc::sentence_bleu, py::arg("pred"), py::arg("target"), py::arg("max_n") = 4);

  m.def("render_judge_prompt",
        [](const std::string& kind, const std::map<std::string, std::string>& fields) {
          return wfc::render_judge_prompt(prompt_kind(kind), fields);
        },
        py::arg("kind"), py::arg("fields"));
  m.def("parse_judge_response", &wfc::parse_judge_response, py::arg("response"));

  py::class_<wfc::Vocabulary>(m, "Vocabulary")
      .def(py::init<std::vector<std::string>, int>(), py::arg("words"), py::arg("num_reward_tokens") = 5)
      .def("__len__", &wfc::Vocabulary::size)
      .def("id", &wfc::Vocabulary::id)
      .def("token", &wfc::Vocabulary::token)
      .def("reward_token", &wfc::Vocabulary::reward_token)
      .def("encode_text", &wfc::Vocabulary::encode_text)
      .def("decode_text", [](const wfc::Vocabulary& v, const std::vector<wfc::TokenId>& ids) { return v.decode_text(ids); })
      .def_property_readonly("tokens", &wfc::Vocabulary::tokens);
}
