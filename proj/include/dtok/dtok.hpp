// Copyright 2026 The dtok Authors
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

#pragma once

#include "dtok/augment.hpp"
#include "dtok/embio.hpp"
#include "dtok/error.hpp"
#include "dtok/frontend.hpp"
#include "dtok/metrics.hpp"
#include "dtok/quantize.hpp"
#include "dtok/random.hpp"
#include "dtok/tokens.hpp"
