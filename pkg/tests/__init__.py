# Tests for AlphaDoc - Formulaic Alpha Research Engine
