# latticemc test suite
