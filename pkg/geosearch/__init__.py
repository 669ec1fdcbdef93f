"""Query-processing core of a geographic keyword search engine."""
