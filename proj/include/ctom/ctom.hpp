// Copyright 2026 The ctom Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Everything. Pulls in cpp-httplib through the HTTP backend, so link
// against ctom::http.

#pragma once

#include "ctom/agent_call.hpp"
#include "ctom/batch.hpp"
#include "ctom/commands.hpp"
#include "ctom/config.hpp"
#include "ctom/core_types.hpp"
#include "ctom/dataset_io.hpp"
#include "ctom/dialogue_engine.hpp"
#include "ctom/dialogue_prompts.hpp"
#include "ctom/errors.hpp"
#include "ctom/evaluator.hpp"
#include "ctom/http_backend.hpp"
#include "ctom/llm_gateway.hpp"
#include "ctom/mental_state.hpp"
#include "ctom/observer.hpp"
#include "ctom/prompt_library.hpp"
#include "ctom/rouge.hpp"
#include "ctom/text.hpp"
