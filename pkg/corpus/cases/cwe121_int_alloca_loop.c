/* 17 ints copied into a 10-byte alloca; outcome depends on optimization level. */
#include <alloca.h>
#include <stddef.h>

#include "io.h"

static void bad(void)
{
    int * data = (int *)alloca(10);
    {
        int source[17] = {0};
        {
            size_t i;
            for (i = 0; i < 17; i++)
            {
                data[i] = source[i];
            }
            printIntLine(data[10]);
        }
    }
}

int main(void)
{
    printLine("Calling bad()...");
    bad();
    printLine("Finished bad()");
    return 0;
}
