/* Copyright 2026 The qmoe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef QMOE_QMOE_HPP_
#define QMOE_QMOE_HPP_

#include "qmoe/dataset.hpp"
#include "qmoe/errors.hpp"
#include "qmoe/fit.hpp"
#include "qmoe/gradients.hpp"
#include "qmoe/ident.hpp"
#include "qmoe/instances.hpp"
#include "qmoe/io.hpp"
#include "qmoe/model.hpp"
#include "qmoe/params.hpp"
#include "qmoe/polysys.hpp"
#include "qmoe/ratelab.hpp"
#include "qmoe/rng.hpp"
#include "qmoe/synth.hpp"
#include "qmoe/voronoi.hpp"

#endif  // QMOE_QMOE_HPP_
