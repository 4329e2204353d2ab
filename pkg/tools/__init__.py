"""Реестр и набор проверок эквивалентности фильтров."""
